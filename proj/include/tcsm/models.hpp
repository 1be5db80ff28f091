#pragma once

#include "tcsm/models/ar_teacher.hpp"
#include "tcsm/models/checkpoint.hpp"
#include "tcsm/models/denoiser.hpp"
#include "tcsm/models/gradient.hpp"
#include "tcsm/models/masked_target.hpp"
#include "tcsm/models/mlp.hpp"
#include "tcsm/models/optimizer.hpp"
#include "tcsm/models/posterior_model.hpp"
#include "tcsm/models/ratio_model.hpp"
