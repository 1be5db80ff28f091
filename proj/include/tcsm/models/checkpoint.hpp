#pragma once

// JSON checkpoints: {"format_version": 1, "kind", "shape", "params"} with
// parameters written as 17-significant-digit strings.

#include <fstream>
#include <variant>

#include "tcsm/models/ar_teacher.hpp"
#include "tcsm/models/denoiser.hpp"
#include "tcsm/models/masked_target.hpp"
#include "tcsm/models/ratio_model.hpp"

namespace tcsm {

inline constexpr int kCheckpointVersion = 1;

using AnyModel = std::variant<Denoiser, RatioModel, MaskedTargetModel, ARTeacher>;

namespace detail {

inline nlohmann::json envelope(std::string kind, nlohmann::json shape, nlohmann::json params) {
  nlohmann::json j;
  j["format_version"] = kCheckpointVersion;
  j["kind"] = std::move(kind);
  j["shape"] = std::move(shape);
  j["params"] = std::move(params);
  return j;
}

inline void fill_params(std::span<double> dst, const nlohmann::json& src) {
  const auto values = doubles_from_json(src);
  if (values.size() != dst.size()) throw FormatError("checkpoint parameter count does not match its shape");
  std::copy(values.begin(), values.end(), dst.begin());
}

}  // namespace detail

inline nlohmann::json checkpoint_json(const Denoiser& m) {
  return detail::envelope("denoiser", m.config().to_json(), doubles_to_json(m.params()));
}
inline nlohmann::json checkpoint_json(const RatioModel& m) {
  return detail::envelope("ratio", m.config().to_json(), doubles_to_json(m.params()));
}
inline nlohmann::json checkpoint_json(const MaskedTargetModel& m) {
  auto body = m.to_json();
  auto counts = std::move(body["counts"]);
  body.erase("counts");
  return detail::envelope("masked_target", std::move(body), std::move(counts));
}
inline nlohmann::json checkpoint_json(const ARTeacher& m) {
  auto body = m.to_json();
  auto tables = std::move(body["tables"]);
  body.erase("tables");
  return detail::envelope("ar_teacher", std::move(body), std::move(tables));
}

inline AnyModel model_from_checkpoint(const nlohmann::json& j) {
  try {
    if (!j.contains("format_version") || j.at("format_version") != kCheckpointVersion)
      throw FormatError("unsupported checkpoint format_version (expected 1)");
    const auto kind = j.at("kind").get<std::string>();
    const auto& shape = j.at("shape");
    if (kind == "denoiser") {
      Denoiser m(DenoiserConfig::from_json(shape));
      detail::fill_params(m.params(), j.at("params"));
      return m;
    }
    if (kind == "ratio") {
      RatioModel m(RatioConfig::from_json(shape));
      detail::fill_params(m.params(), j.at("params"));
      return m;
    }
    if (kind == "masked_target") {
      auto body = shape;
      body["counts"] = j.at("params");
      return MaskedTargetModel::from_json(body);
    }
    if (kind == "ar_teacher") {
      auto body = shape;
      body["tables"] = j.at("params");
      return ARTeacher::from_json(body);
    }
    throw FormatError("unknown checkpoint kind \"" + kind + "\"");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what());
  }
}

template <class Model>
void save_checkpoint(const Model& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << checkpoint_json(m).dump() << '\n';
  if (!out) throw Error("failed writing " + path);
}

inline AnyModel load_any_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open checkpoint " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint " + path + " is not valid JSON: " + e.what());
  }
  return model_from_checkpoint(j);
}

template <class Model>
Model load_checkpoint(const std::string& path) {
  auto any = load_any_checkpoint(path);
  if (auto* m = std::get_if<Model>(&any)) return std::move(*m);
  throw FormatError("checkpoint " + path + " holds a different model kind");
}

}  // namespace tcsm
