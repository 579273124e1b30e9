#pragma once

#include "enecg/adapters/checkpoint.hpp"
#include "enecg/adapters/lora.hpp"
#include "enecg/error.hpp"
#include "enecg/experts/expert.hpp"
#include "enecg/gating/baselines.hpp"
#include "enecg/gating/gate.hpp"
#include "enecg/metrics.hpp"
#include "enecg/numerics/adam.hpp"
#include "enecg/numerics/finite_diff.hpp"
#include "enecg/numerics/tape.hpp"
#include "enecg/numerics/tensor.hpp"
#include "enecg/pipeline/config.hpp"
#include "enecg/pipeline/dataset.hpp"
#include "enecg/pipeline/evaluate.hpp"
#include "enecg/pipeline/experiment.hpp"
#include "enecg/pipeline/features.hpp"
#include "enecg/pipeline/model.hpp"
#include "enecg/pipeline/report.hpp"
#include "enecg/pipeline/split.hpp"
#include "enecg/pipeline/task.hpp"
#include "enecg/pipeline/train.hpp"
#include "enecg/saliency/integrated_gradients.hpp"
#include "enecg/saliency/targets.hpp"
#include "enecg/signal/generator.hpp"
#include "enecg/signal/record.hpp"
#include "enecg/signal/record_io.hpp"
#include "enecg/signal/transforms.hpp"
