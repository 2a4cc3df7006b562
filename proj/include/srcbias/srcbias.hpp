#pragma once

#include <string_view>

#include "srcbias/benchmark_builder.hpp"
#include "srcbias/bias_eval.hpp"
#include "srcbias/common.hpp"
#include "srcbias/compression_analysis.hpp"
#include "srcbias/corpus_store.hpp"
#include "srcbias/debias_trainer.hpp"
#include "srcbias/retrieval.hpp"
#include "srcbias/text.hpp"
#include "srcbias/theorem_lab.hpp"

namespace srcbias {

inline constexpr std::string_view kVersion = "0.1.0";

}  // namespace srcbias
