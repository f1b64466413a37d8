// SPDX-License-Identifier: Apache-2.0
#include "model.hpp"

#include "binio.hpp"

#include <cmath>
#include <cstring>

namespace ueppr {

namespace {

constexpr char kMagic[4] = {'U', 'E', 'P', 'R'};
constexpr std::uint32_t kVersion = 1;

void fill_normal(Param& p, Rng& rng, double stddev) {
    for (auto& v : p.data) v = rng.normal(0.0, stddev);
}

std::uint32_t feature_bits(const FeatureSwitches& f) {
    return (f.description ? 1u : 0u) | (f.attributes ? 2u : 0u) | (f.location ? 4u : 0u) | (f.history ? 8u : 0u) |
           (f.graph ? 16u : 0u);
}

FeatureSwitches features_from_bits(std::uint32_t b) {
    return FeatureSwitches{(b & 1u) != 0, (b & 2u) != 0, (b & 4u) != 0, (b & 8u) != 0, (b & 16u) != 0};
}

}  // namespace

TwoTowerModel::TwoTowerModel(const ModelConfig& config, LocationFeaturizer locations, std::uint64_t seed)
    : config_(config), locations_(std::move(locations)) {
    const std::size_t de = config_.embed_dim;
    const std::size_t d = config_.out_dim;
    if (de == 0 || d == 0 || config_.buckets == 0 || config_.shop_buckets == 0)
        fail(ErrorCode::invalid_argument, "model dimensions must be positive");
    Rng rng(seed);

    add("token_table", {config_.buckets, de});
    fill_normal(params_.back(), rng, 0.1);
    add("shop_table", {config_.shop_buckets, de});
    fill_normal(params_.back(), rng, 0.1);
    add("position_table", {sequence_length(), de});
    fill_normal(params_.back(), rng, 0.02);

    for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) {
        add(w, {de, de});
        fill_normal(params_.back(), rng, 1.0 / std::sqrt(double(de)));
    }
    add("attn.scale", {de});
    std::fill(params_.back().data.begin(), params_.back().data.end(), 0.1);
    add("ff.w1", {de, config_.ff_dim});
    fill_normal(params_.back(), rng, std::sqrt(2.0 / double(de)));
    add("ff.b1", {config_.ff_dim});
    add("ff.w2", {config_.ff_dim, de});
    fill_normal(params_.back(), rng, 1.0 / std::sqrt(double(config_.ff_dim)));
    add("ff.b2", {de});
    add("ff.scale", {de});
    std::fill(params_.back().data.begin(), params_.back().data.end(), 0.1);

    auto add_mlp = [&](const std::string& prefix, std::size_t in) {
        const std::size_t hidden = 2 * d;
        add(prefix + ".w1", {in, hidden});
        fill_normal(params_.back(), rng, std::sqrt(2.0 / double(in)));
        add(prefix + ".bn1.gamma", {hidden});
        std::fill(params_.back().data.begin(), params_.back().data.end(), 1.0);
        add(prefix + ".bn1.beta", {hidden});
        add(prefix + ".bn1.mean", {hidden}, false);
        add(prefix + ".bn1.var", {hidden}, false);
        std::fill(params_.back().data.begin(), params_.back().data.end(), 1.0);
        add(prefix + ".w2", {hidden, d});
        fill_normal(params_.back(), rng, std::sqrt(1.0 / double(hidden)));
        add(prefix + ".bn2.gamma", {d});
        std::fill(params_.back().data.begin(), params_.back().data.end(), 1.0);
        add(prefix + ".bn2.beta", {d});
        add(prefix + ".bn2.mean", {d}, false);
        add(prefix + ".bn2.var", {d}, false);
        std::fill(params_.back().data.begin(), params_.back().data.end(), 1.0);
    };
    add_mlp("product_mlp", product_input_dim());
    add_mlp("query_mlp", query_input_dim());

    for (const auto& km : locations_.bucketings) {
        add("locbucket." + std::to_string(km.k) + ".centers", {km.k, 2}, false);
        auto& p = params_.back();
        for (std::size_t i = 0; i < km.k; ++i) {
            p.data[2 * i] = km.centers[i][0];
            p.data[2 * i + 1] = km.centers[i][1];
        }
    }
    refresh_slots();
}

void TwoTowerModel::add(std::string name, std::vector<std::size_t> shape, bool trainable) {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    by_name_[name] = params_.size();
    params_.push_back(Param{std::move(name), std::move(shape), std::vector<double>(n, 0.0), trainable});
}

Param& TwoTowerModel::param(const std::string& name) { return params_[param_index(name)]; }
const Param& TwoTowerModel::param(const std::string& name) const { return params_[param_index(name)]; }

std::size_t TwoTowerModel::param_index(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) fail(ErrorCode::not_found, "no parameter named " + name);
    return it->second;
}

void TwoTowerModel::refresh_slots() {
    by_name_.clear();
    for (std::size_t i = 0; i < params_.size(); ++i) by_name_[params_[i].name] = i;
    auto& s = slots_;
    s.token_table = param_index("token_table");
    s.shop_table = param_index("shop_table");
    s.position_table = param_index("position_table");
    s.wq = param_index("attn.wq");
    s.wk = param_index("attn.wk");
    s.wv = param_index("attn.wv");
    s.wo = param_index("attn.wo");
    s.attn_scale = param_index("attn.scale");
    s.ff_w1 = param_index("ff.w1");
    s.ff_b1 = param_index("ff.b1");
    s.ff_w2 = param_index("ff.w2");
    s.ff_b2 = param_index("ff.b2");
    s.ff_scale = param_index("ff.scale");
    auto mlp = [&](const std::string& p) {
        return Slots::Mlp{param_index(p + ".w1"),       param_index(p + ".bn1.gamma"), param_index(p + ".bn1.beta"),
                          param_index(p + ".bn1.mean"), param_index(p + ".bn1.var"),   param_index(p + ".w2"),
                          param_index(p + ".bn2.gamma"), param_index(p + ".bn2.beta"), param_index(p + ".bn2.mean"),
                          param_index(p + ".bn2.var")};
    };
    s.product = mlp("product_mlp");
    s.query = mlp("query_mlp");
}

std::uint32_t TwoTowerModel::token_bucket(std::string_view token) const {
    return static_cast<std::uint32_t>(fnv1a64(token) % config_.buckets);
}

std::uint32_t TwoTowerModel::shop_bucket(std::uint64_t shop_id) const {
    char buf[8];
    std::memcpy(buf, &shop_id, 8);
    return static_cast<std::uint32_t>(fnv1a64(std::string_view(buf, 8)) % config_.shop_buckets);
}

std::string TwoTowerModel::serialize() const {
    Writer w;
    w.put_bytes(std::string_view(kMagic, 4));
    w.put<std::uint32_t>(kVersion);
    const std::uint32_t dims[] = {static_cast<std::uint32_t>(config_.embed_dim),
                                  static_cast<std::uint32_t>(config_.out_dim),
                                  static_cast<std::uint32_t>(config_.buckets),
                                  static_cast<std::uint32_t>(config_.shop_buckets),
                                  static_cast<std::uint32_t>(config_.max_searches),
                                  static_cast<std::uint32_t>(config_.max_shops),
                                  static_cast<std::uint32_t>(config_.ff_dim),
                                  static_cast<std::uint32_t>(config_.graph_samples),
                                  static_cast<std::uint32_t>(config_.text_dim),
                                  feature_bits(config_.features)};
    w.put<std::uint32_t>(static_cast<std::uint32_t>(std::size(dims)));
    for (auto d : dims) w.put<std::uint32_t>(d);
    w.put<double>(config_.bn_momentum);
    w.put<double>(config_.bn_eps);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(params_.size()));
    for (const auto& p : params_) {
        w.put<std::uint32_t>(static_cast<std::uint32_t>(p.name.size()));
        w.put_bytes(p.name);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(p.shape.size()));
        for (auto s : p.shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(s));
        for (double v : p.data) w.put<float>(static_cast<float>(v));
    }
    return w.take();
}

TwoTowerModel TwoTowerModel::deserialize(std::string_view bytes) {
    Reader r(bytes, "checkpoint");
    if (r.bytes(4) != std::string_view(kMagic, 4)) fail(ErrorCode::parse, "not a model checkpoint (bad magic)");
    const auto version = r.get<std::uint32_t>();
    if (version != kVersion) fail(ErrorCode::version_mismatch, "unsupported checkpoint version " + std::to_string(version));
    const auto ndims = r.get<std::uint32_t>();
    std::vector<std::uint32_t> dims(ndims);
    for (auto& d : dims) d = r.get<std::uint32_t>();
    if (ndims < 10) fail(ErrorCode::parse, "checkpoint header too short");

    TwoTowerModel m;
    m.config_.embed_dim = dims[0];
    m.config_.out_dim = dims[1];
    m.config_.buckets = dims[2];
    m.config_.shop_buckets = dims[3];
    m.config_.max_searches = dims[4];
    m.config_.max_shops = dims[5];
    m.config_.ff_dim = dims[6];
    m.config_.graph_samples = dims[7];
    m.config_.text_dim = dims[8];
    m.config_.features = features_from_bits(dims[9]);
    m.config_.bn_momentum = r.get<double>();
    m.config_.bn_eps = r.get<double>();

    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t t = 0; t < count; ++t) {
        Param p;
        p.name = std::string(r.bytes(r.get<std::uint32_t>()));
        const auto nd = r.get<std::uint32_t>();
        std::size_t n = 1;
        for (std::uint32_t i = 0; i < nd; ++i) {
            p.shape.push_back(r.get<std::uint32_t>());
            n *= p.shape.back();
        }
        p.data.resize(n);
        for (auto& v : p.data) v = r.get<float>();
        p.trainable = !(p.name.ends_with(".mean") || p.name.ends_with(".var") || p.name.starts_with("locbucket."));
        if (p.name.starts_with("locbucket.")) {
            KMeansModel km;
            km.k = p.shape.at(0);
            for (std::size_t i = 0; i < km.k; ++i) km.centers.push_back({p.data[2 * i], p.data[2 * i + 1]});
            m.locations_.bucketings.push_back(std::move(km));
        }
        m.params_.push_back(std::move(p));
    }
    if (!r.done()) fail(ErrorCode::parse, "trailing bytes after checkpoint");
    m.refresh_slots();
    return m;
}

void TwoTowerModel::save(const std::string& path) const { write_file(path, serialize()); }

TwoTowerModel TwoTowerModel::load(const std::string& path) { return deserialize(read_file(path)); }

std::string model_version_of(std::string_view checkpoint_bytes) { return to_hex(fnv1a64(checkpoint_bytes)); }

std::string model_version_of(const TwoTowerModel& model) { return model_version_of(model.serialize()); }

}  // namespace ueppr
