// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "ann.hpp"
#include "boost.hpp"
#include "model.hpp"

namespace ueppr {

/// Queries ranked by training-log frequency of their normalized text: the
/// top head_fraction is "head", the bottom tail_fraction is "tail", the rest
/// "torso". Ties rank by canonical key.
struct SegmentOptions {
    double head_fraction = 0.1;
    double tail_fraction = 0.5;
};

std::vector<std::string> segment_queries(const std::vector<EvalQuery>& eval, const InteractionLog& train_log,
                                         const SegmentOptions& options = {});

struct QueryRecall {
    std::string key;
    std::string query;
    std::string segment;
    std::size_t targets = 0;
    std::vector<double> recall;  // per k
};

struct SegmentRecall {
    std::size_t count = 0;
    std::vector<double> recall;  // per k; mean over the segment's queries
};

struct RecallReport {
    std::string label;
    std::vector<std::size_t> ks;
    std::map<std::string, SegmentRecall> segments;  // "all", "head", "torso", "tail"
    std::vector<QueryRecall> rows;
    std::string config_json = "{}";
    std::vector<std::uint64_t> seeds;

    double recall(const std::string& segment, std::size_t k) const;
    std::string to_json() const;
    static RecallReport from_json(const std::string& text);
    std::string to_markdown() const;
};

/// Query vectors in index space: tower outputs, hydrated when `boost` is set.
std::vector<std::vector<float>> index_query_vectors(const TwoTowerModel& model,
                                                    const std::vector<QueryUserContext>& contexts,
                                                    const BoostWeights* boost);

/// Per-query Recall@K with the given index, averaged per segment.
RecallReport run_eval(const TwoTowerModel& model, const VectorIndex& index, const std::vector<EvalQuery>& eval,
                      const std::vector<std::size_t>& ks, const std::vector<std::string>& segments,
                      const BoostWeights* boost = nullptr, std::size_t ef_search = 0);

enum class ReportLayout {
    segments,  // Recall@K for all/head/tail per report
    ablation,  // Recall@K and relative gain over the first report
};
ReportLayout parse_report_layout(const std::string& name);

std::string render_report(const std::vector<RecallReport>& reports, ReportLayout layout);

}  // namespace ueppr
