#pragma once

#include "sgmim/autodiff.hpp"
#include "sgmim/checkpoint.hpp"
#include "sgmim/config.hpp"
#include "sgmim/encoder.hpp"
#include "sgmim/gradcheck.hpp"
#include "sgmim/guidance.hpp"
#include "sgmim/metrics.hpp"
#include "sgmim/model.hpp"
#include "sgmim/objective.hpp"
#include "sgmim/optim.hpp"
#include "sgmim/patch_mask.hpp"
#include "sgmim/probe.hpp"
#include "sgmim/spectrum.hpp"
#include "sgmim/sweep.hpp"
#include "sgmim/synthdata.hpp"
#include "sgmim/trainer.hpp"
