#pragma once

// Bregman generators and the statistical divergences the losses use.

#include <cmath>
#include <span>
#include <string>
#include <string_view>

#include "tcsm/core.hpp"

namespace tcsm {

enum class Bregman { GKL, LSIF, BCE };

inline std::string_view to_string(Bregman g) {
  switch (g) {
    case Bregman::GKL: return "gkl";
    case Bregman::LSIF: return "lsif";
    case Bregman::BCE: return "bce";
  }
  return "?";
}

inline Bregman bregman_from_string(std::string_view s) {
  if (s == "gkl") return Bregman::GKL;
  if (s == "lsif") return Bregman::LSIF;
  if (s == "bce") return Bregman::BCE;
  throw ConfigError("unknown Bregman generator \"" + std::string(s) + "\" (expected gkl, lsif or bce)");
}

// F(r). GKL and BCE are defined at r = 0 by continuity.
inline double bregman_F(Bregman g, double r) {
  switch (g) {
    case Bregman::GKL:
      if (r < 0.0) throw DomainError("GKL generator needs r >= 0");
      return r == 0.0 ? 0.0 : r * std::log(r) - r;
    case Bregman::LSIF:
      return 0.5 * (r - 1.0) * (r - 1.0);
    case Bregman::BCE:
      if (r < 0.0) throw DomainError("BCE generator needs r >= 0");
      return r == 0.0 ? 0.0 : r * std::log(r) - (r + 1.0) * std::log1p(r);
  }
  return 0.0;
}

inline double bregman_dF(Bregman g, double r) {
  switch (g) {
    case Bregman::GKL:
      if (!(r > 0.0)) throw DomainError("GKL generator derivative needs r > 0");
      return std::log(r);
    case Bregman::LSIF:
      return r - 1.0;
    case Bregman::BCE:
      if (!(r > 0.0)) throw DomainError("BCE generator derivative needs r > 0");
      return std::log(r) - std::log1p(r);
  }
  return 0.0;
}

inline double bregman_d2F(Bregman g, double r) {
  switch (g) {
    case Bregman::GKL:
      if (!(r > 0.0)) throw DomainError("GKL generator needs r > 0");
      return 1.0 / r;
    case Bregman::LSIF:
      return 1.0;
    case Bregman::BCE:
      if (!(r > 0.0)) throw DomainError("BCE generator needs r > 0");
      return 1.0 / (r * (1.0 + r));
  }
  return 0.0;
}

// Single coordinate F(u) - F(v) - F'(v)(u - v).
inline double bregman_term(Bregman g, double u, double v) {
  return bregman_F(g, u) - bregman_F(g, v) - bregman_dF(g, v) * (u - v);
}

// d/dv of bregman_term: -F''(v)(u - v).
inline double bregman_term_dv(Bregman g, double u, double v) { return -bregman_d2F(g, v) * (u - v); }

inline double bregman(Bregman g, std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw DomainError("bregman: vectors differ in length");
  double s = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) s += bregman_term(g, u[j], v[j]);
  return s;
}

// ---------------------------------------------------------------------------

enum class StatDivergence { KL, IS, GKLvec };

inline std::string_view to_string(StatDivergence d) {
  switch (d) {
    case StatDivergence::KL: return "kl";
    case StatDivergence::IS: return "is";
    case StatDivergence::GKLvec: return "gkl_vec";
  }
  return "?";
}

inline StatDivergence stat_divergence_from_string(std::string_view s) {
  if (s == "kl") return StatDivergence::KL;
  if (s == "is") return StatDivergence::IS;
  if (s == "gkl_vec") return StatDivergence::GKLvec;
  throw ConfigError("unknown divergence \"" + std::string(s) + "\" (expected kl, is or gkl_vec)");
}

inline double stat_divergence(StatDivergence kind, std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw DomainError("stat_divergence: vectors differ in length");
  double s = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    const double a = p[j];
    const double b = q[j];
    switch (kind) {
      case StatDivergence::KL:
        if (a == 0.0) break;
        if (b == 0.0) throw SupportError("KL: p has mass where q has none");
        s += a * std::log(a / b);
        break;
      case StatDivergence::IS:
        if (a == 0.0 && b == 0.0) break;
        if (a == 0.0 || b == 0.0) throw SupportError("IS: p and q must share support");
        s += a / b - std::log(a / b) - 1.0;
        break;
      case StatDivergence::GKLvec:
        if (a == 0.0) {
          s += b;
          break;
        }
        if (b == 0.0) throw SupportError("generalized KL: p has mass where q has none");
        s += a * std::log(a / b) - a + b;
        break;
    }
  }
  return s;
}

inline double stat_divergence(StatDivergence kind, const Categorical& p, const Categorical& q) {
  return stat_divergence(kind, p.span(), q.span());
}

inline double kl_divergence(const Categorical& p, const Categorical& q) {
  return stat_divergence(StatDivergence::KL, p, q);
}

}  // namespace tcsm
