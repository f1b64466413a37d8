// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "featurize.hpp"

namespace ueppr {

/// Row-major dense matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double* row(std::size_t r) { return data.data() + r * cols; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }
    std::span<const double> row_span(std::size_t r) const { return {row(r), cols}; }
    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

struct Param {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> data;
    bool trainable = true;

    std::size_t size() const { return data.size(); }
    std::size_t cols() const { return shape.size() > 1 ? shape[1] : 1; }
};

struct ModelConfig {
    std::size_t embed_dim = 64;          // d_e
    std::size_t out_dim = 64;            // d
    std::size_t buckets = 1u << 18;      // token hash buckets
    std::size_t shop_buckets = 1u << 14;
    std::size_t max_searches = 5;        // m_s
    std::size_t max_shops = 5;           // n_c
    std::size_t ff_dim = 128;            // transformer feed-forward width
    std::size_t graph_samples = 8;
    std::size_t text_dim = 0;            // optional external product text vector
    double bn_momentum = 0.9;
    double bn_eps = 1e-5;
    FeatureSwitches features;

    bool operator==(const ModelConfig&) const = default;
};

/// All learned parameters of both towers plus the fitted location buckets.
class TwoTowerModel {
public:
    TwoTowerModel() = default;
    TwoTowerModel(const ModelConfig& config, LocationFeaturizer locations, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    const LocationFeaturizer& locations() const { return locations_; }

    std::vector<Param>& params() { return params_; }
    const std::vector<Param>& params() const { return params_; }
    Param& param(const std::string& name);
    const Param& param(const std::string& name) const;
    std::size_t param_index(const std::string& name) const;

    std::size_t product_input_dim() const { return 5 * config_.embed_dim + config_.text_dim; }
    std::size_t query_input_dim() const { return 5 * config_.embed_dim; }
    std::size_t sequence_length() const { return 1 + config_.max_searches + config_.max_shops; }

    std::uint32_t token_bucket(std::string_view token) const;
    std::uint32_t shop_bucket(std::uint64_t shop_id) const;

    /// Cached parameter indices, refreshed on construction and load.
    struct Slots {
        std::size_t token_table, shop_table, position_table;
        std::size_t wq, wk, wv, wo, attn_scale, ff_w1, ff_b1, ff_w2, ff_b2, ff_scale;
        struct Mlp {
            std::size_t w1, gamma1, beta1, mean1, var1, w2, gamma2, beta2, mean2, var2;
        } product, query;
    };
    const Slots& slots() const { return slots_; }

    // Checkpoint: "UEPR", u32 version, dims, then named f32 tensors.
    std::string serialize() const;
    static TwoTowerModel deserialize(std::string_view bytes);
    void save(const std::string& path) const;
    static TwoTowerModel load(const std::string& path);

private:
    void add(std::string name, std::vector<std::size_t> shape, bool trainable = true);
    void refresh_slots();

    ModelConfig config_;
    LocationFeaturizer locations_;
    std::vector<Param> params_;
    std::unordered_map<std::string, std::size_t> by_name_;
    Slots slots_{};
};

/// Hex FNV-1a of the checkpoint bytes; stamps indexes and weight files.
std::string model_version_of(std::string_view checkpoint_bytes);
std::string model_version_of(const TwoTowerModel& model);

}  // namespace ueppr
