#pragma once

// Umbrella header.

#include "edap/config.hpp"
#include "edap/error.hpp"
#include "edap/experiment.hpp"
#include "edap/finetune.hpp"
#include "edap/nn/checkpoint_io.hpp"
#include "edap/nn/model.hpp"
#include "edap/nn/optimizer.hpp"
#include "edap/nn/tensor.hpp"
#include "edap/nn/train.hpp"
#include "edap/pretrain.hpp"
#include "edap/rng.hpp"
#include "edap/signal_store.hpp"
#include "edap/version.hpp"
#include "edap/windowing.hpp"
