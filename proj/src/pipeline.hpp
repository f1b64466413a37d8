// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>

#include "boost.hpp"
#include "corpus.hpp"
#include "evaluation.hpp"
#include "model.hpp"

// File-level commands behind the C API. Each takes a JSON object of options
// and returns a JSON summary (or Markdown for reports). Unknown option keys
// are rejected.
namespace ueppr::pipeline {

struct Dataset {
    ProductCorpus corpus;
    TrainEvalSplit split;
    std::int64_t cutoff = 0;
    BipartiteGraph graph;  // from the training split
};

/// cutoff < 0 selects the default evaluation window.
Dataset load_dataset(const std::string& products_path, const std::string& log_path, std::int64_t cutoff,
                     std::uint32_t graph_min_count);

/// Tower outputs for every product, hydrated with `boost` when given.
VectorSet product_vectors(const TwoTowerModel& model, const ProductCorpus& corpus, const BipartiteGraph& graph,
                          const BoostWeights* boost);

std::vector<RecallQuery> recall_queries(const TwoTowerModel& model, const std::vector<EvalQuery>& eval,
                                        const BoostWeights* boost);

std::string synth(const std::string& options_json);
std::string train(const std::string& options_json, const std::function<void(const std::string&)>& log = {});
std::string index_build(const std::string& options_json);
std::string index_eval(const std::string& options_json);
std::string tune_ann(const std::string& options_json);
std::string tune_boost(const std::string& options_json);
std::string eval(const std::string& options_json);
std::string report(const std::string& options_json);

}  // namespace ueppr::pipeline
