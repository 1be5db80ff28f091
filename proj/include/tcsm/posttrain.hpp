#pragma once

#include "tcsm/posttrain/distill.hpp"
#include "tcsm/posttrain/dpo.hpp"
#include "tcsm/posttrain/dre.hpp"
#include "tcsm/posttrain/reward.hpp"
