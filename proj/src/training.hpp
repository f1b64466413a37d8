// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "towers.hpp"

namespace ueppr {

enum class Label { purchase, cartadd, click, negative };
Label label_of(InteractionKind kind);
const char* label_name(Label label);
Label parse_label(const std::string& name);

struct LossThresholds {
    double purchase = 0.75;
    double cartadd = 0.55;
    double click = 0.40;
    double negative = 0.25;
    /// Throws unless negative < click < cartadd < purchase, all in (0,1).
    void validate() const;
    double for_label(Label label) const;
};

/// Positive of tier i: max(0, eps_i - y). Negative: max(0, y - eps_neg).
double multi_part_hinge(double y, Label label, const LossThresholds& t);
/// Subgradient in y; zero at the hinge point.
double multi_part_hinge_grad(double y, Label label, const LossThresholds& t);

struct NegativeWeights {
    double uniform = 1.0;
    double inbatch = 0.0;
    double dynamic = 0.0;
};

struct ScheduleConfig {
    double warmup_end = 0.10;  // fraction of total steps with uniform-only weights
    double ramp_end = 0.60;    // fraction where the final weights are reached
    NegativeWeights final_weights{0.3, 0.35, 0.35};
};

NegativeWeights negative_weight_schedule(std::size_t step, std::size_t total_steps, const ScheduleConfig& config);

/// Uniform draw of n distinct products, never `exclude_id`.
std::vector<std::uint64_t> sample_uniform_negatives(const ProductCorpus& corpus, std::size_t n,
                                                    std::optional<std::uint64_t> exclude_id, Rng& rng);

/// The k rows of `positives` (other than anchor and any row whose product id
/// equals the anchor's) scoring highest against `queries` row anchor; ties by
/// lower index.
std::vector<std::size_t> sample_hard_in_batch(const Matrix& queries, const Matrix& positives, std::size_t anchor,
                                              std::size_t k, const std::vector<std::uint64_t>* product_ids = nullptr);

/// Two-phase dynamic mining: draws `large_batch` distinct corpus rows,
/// scores them with the current (inference-mode) product tower, returns the
/// top-k corpus rows by score; never `exclude_id`. Parameters are not touched.
std::vector<std::size_t> sample_dynamic_hard(const TwoTowerModel& model, const std::vector<ProductFeatures>& corpus,
                                             std::span<const double> anchor_query_vec, std::size_t large_batch,
                                             std::size_t k, std::optional<std::uint64_t> exclude_id, Rng& rng);

struct TrainConfig {
    ModelConfig model;
    std::size_t batch_size = 256;
    double lr = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t epochs = 5;
    LossThresholds thresholds;
    ScheduleConfig schedule;
    bool use_uniform = true;
    bool use_inbatch = true;
    bool use_dynamic = true;
    /// Follow the schedule; otherwise enabled sources share weight equally.
    bool weighted = true;
    bool train_on_clicks = true;
    std::size_t n_uniform = 16;       // per anchor
    std::size_t uniform_pool = 256;   // shared per step
    std::size_t n_inbatch = 8;
    std::size_t large_batch = 2048;
    std::size_t n_dynamic = 8;
    std::uint32_t graph_min_count = 1;
    std::vector<std::size_t> location_ks{50, 100, 500};
    std::vector<std::size_t> eval_ks{10, 100};
    std::uint64_t seed = 1;

    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
};

/// One scored (query, product) pair of a training step.
struct LossTerm {
    std::size_t query = 0;  // index into the step's query inputs
    std::size_t slot = 0;   // index into the step's product inputs
    Label label = Label::negative;
    double weight = 0.0;
};

/// Everything needed to recompute one step's loss deterministically.
struct StepBatch {
    std::vector<QueryInput> queries;
    std::vector<ProductInput> products;
    std::vector<std::uint64_t> product_ids;  // per slot
    std::vector<LossTerm> terms;
};

struct StepResult {
    double loss = 0.0;
    TowerStats query_stats;
    TowerStats product_stats;
    std::uint64_t signature = 0;  // hash of ReLU and hinge activity patterns
};

/// Forward (and backward into `grads` when non-null) for a fixed batch.
StepResult compute_step(const TwoTowerModel& model, const StepBatch& batch, const LossThresholds& thresholds,
                        BnMode mode, const TowerStats* frozen_query, const TowerStats* frozen_product,
                        Gradients* grads);

/// Inputs prepared once per training run.
struct TrainData {
    const ProductCorpus* corpus = nullptr;
    BipartiteGraph graph;
    std::vector<ProductFeatures> product_features;  // per corpus row
    std::vector<QueryInput> queries;                // per example
    std::vector<std::size_t> positive_rows;         // per example
    std::vector<Label> labels;                      // per example
    std::vector<std::string> query_text;            // per example, for graph exclusion
};

TrainData prepare_train_data(const TwoTowerModel& model, const ProductCorpus& corpus, const InteractionLog& train_log,
                             const TrainConfig& config);

/// Builds the loss terms of one step for the examples in `rows`.
StepBatch assemble_step(const TwoTowerModel& model, const TrainData& data, const std::vector<std::size_t>& rows,
                        const TrainConfig& config, const NegativeWeights& weights, Rng& rng);

struct EpochMetrics {
    std::size_t epoch = 0;
    double loss = 0.0;
    std::vector<double> recall;  // per eval_ks entry; empty without an eval set
};

struct TrainResult {
    TwoTowerModel model;
    std::vector<EpochMetrics> history;
};

/// Mean Recall@K over eval queries with exact retrieval over `corpus`.
std::vector<double> evaluate_recall(const TwoTowerModel& model, const ProductCorpus& corpus, const BipartiteGraph& graph,
                                    const std::vector<EvalQuery>& eval, const std::vector<std::size_t>& ks);

/// Mini-batch Adam on the hinge objective. Deterministic for a fixed seed.
/// Throws Error(diverged) on a non-finite loss.
TrainResult train(const TrainConfig& config, const ProductCorpus& corpus, const InteractionLog& train_log,
                  const std::vector<EvalQuery>* eval = nullptr,
                  const std::function<void(const EpochMetrics&)>& on_epoch = {});

std::string metrics_csv(const std::vector<EpochMetrics>& history, const std::vector<std::size_t>& ks);

/// Adam with lazy (touched-rows-only) updates for the embedding tables.
class AdamOptimizer {
public:
    AdamOptimizer(const TwoTowerModel& model, double lr, double beta1, double beta2, double eps);
    void step(TwoTowerModel& model, const Gradients& grads);
    std::size_t steps() const { return t_; }

private:
    double lr_, b1_, b2_, eps_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t checked = 0;
    std::size_t skipped_kinks = 0;
    double graph_token_grad_abs = 0.0;  // max |grad| on rows reached only via graph neighbors
    std::size_t graph_only_rows = 0;
};

/// Central differences against the analytic gradient of compute_step for
/// every trainable tensor (all touched rows of the embedding tables), batch
/// norm frozen at the batch's own statistics. Coordinates whose perturbation
/// crosses a ReLU or hinge kink are retried with smaller eps, then skipped.
GradCheckResult grad_check(TwoTowerModel& model, const StepBatch& batch, const LossThresholds& thresholds,
                           double eps = 1e-4);

}  // namespace ueppr
