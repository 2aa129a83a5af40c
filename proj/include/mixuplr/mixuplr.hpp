#pragma once

// Convenience header pulling in the whole library.

#include "mixuplr/checkpoint.hpp"
#include "mixuplr/config.hpp"
#include "mixuplr/datasets.hpp"
#include "mixuplr/error.hpp"
#include "mixuplr/experiment.hpp"
#include "mixuplr/format.hpp"
#include "mixuplr/lipschitz.hpp"
#include "mixuplr/loss_heads.hpp"
#include "mixuplr/mixup.hpp"
#include "mixuplr/mlp.hpp"
#include "mixuplr/numeric.hpp"
#include "mixuplr/optimizer.hpp"
#include "mixuplr/random.hpp"
#include "mixuplr/robustness.hpp"
#include "mixuplr/tensor.hpp"
#include "mixuplr/trainer.hpp"
