#pragma once

#include "alertcast/attack_miner.hpp"
#include "alertcast/baselines.hpp"
#include "alertcast/errors.hpp"
#include "alertcast/evaluation.hpp"
#include "alertcast/event_data.hpp"
#include "alertcast/memory_array_rnn.hpp"
#include "alertcast/model_io.hpp"
#include "alertcast/rng.hpp"
#include "alertcast/runtime.hpp"
#include "alertcast/synth_gen.hpp"
#include "alertcast/trainer.hpp"
