// SPDX-License-Identifier: Apache-2.0
#include "towers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ueppr {

std::uint32_t hash_token(std::string_view token, std::size_t buckets) {
    return static_cast<std::uint32_t>(fnv1a64(token) % buckets);
}

namespace {

TokenIds to_ids(const TwoTowerModel& model, const TokenBag& bag) {
    TokenIds ids;
    ids.reserve(bag.size());
    for (const auto& t : bag) ids.push_back(model.token_bucket(t));
    return ids;
}

// out += mean of the rows of `table` listed in ids.
void add_avg(const Param& table, const TokenIds& ids, double* out) {
    if (ids.empty()) return;
    const std::size_t cols = table.cols();
    const double inv = 1.0 / double(ids.size());
    for (auto id : ids) {
        const double* row = table.data.data() + std::size_t(id) * cols;
        for (std::size_t c = 0; c < cols; ++c) out[c] += inv * row[c];
    }
}

void scatter_avg_grad(SparseRows& grad, const TokenIds& ids, const double* d) {
    if (ids.empty()) return;
    const std::size_t cols = grad.cols();
    const double inv = 1.0 / double(ids.size());
    for (auto id : ids) {
        double* g = grad.row(id);
        for (std::size_t c = 0; c < cols; ++c) g[c] += inv * d[c];
    }
}

// z(1 x out) = x(1 x in) W(in x out)
void vec_mat(const double* x, std::size_t in, const Param& w, double* z) {
    const std::size_t out = w.cols();
    std::fill(z, z + out, 0.0);
    for (std::size_t k = 0; k < in; ++k) {
        const double xv = x[k];
        if (xv == 0.0) continue;
        const double* wr = w.data.data() + k * out;
        for (std::size_t c = 0; c < out; ++c) z[c] += xv * wr[c];
    }
}

// dW += x^T dz ; dx = dz W^T (dx may be null)
void vec_mat_backward(const double* x, std::size_t in, const Param& w, const double* dz, std::vector<double>& dw,
                      double* dx) {
    const std::size_t out = w.cols();
    for (std::size_t k = 0; k < in; ++k) {
        const double xv = x[k];
        const double* wr = w.data.data() + k * out;
        double* dwr = dw.data() + k * out;
        double acc = 0;
        for (std::size_t c = 0; c < out; ++c) {
            if (xv != 0.0) dwr[c] += xv * dz[c];
            acc += dz[c] * wr[c];
        }
        if (dx) dx[k] += acc;
    }
}

void matmul(const Matrix& x, const Param& w, Matrix& z) {
    z = Matrix(x.rows, w.cols());
    for (std::size_t i = 0; i < x.rows; ++i) vec_mat(x.row(i), x.cols, w, z.row(i));
}

void batchnorm_forward(const Matrix& z, const TwoTowerModel& model, std::size_t gamma, std::size_t beta,
                       std::size_t run_mean, std::size_t run_var, BnMode mode, const BnStats* frozen, Matrix& xhat,
                       Matrix& y, std::vector<double>& inv_std, BnStats& stats) {
    const std::size_t n = z.rows;
    const std::size_t cols = z.cols;
    const double eps = model.config().bn_eps;
    const auto& g = model.params()[gamma].data;
    const auto& b = model.params()[beta].data;
    stats.mean.assign(cols, 0.0);
    stats.var.assign(cols, 0.0);
    if (mode == BnMode::train) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < cols; ++c) stats.mean[c] += z(i, c);
        for (auto& m : stats.mean) m /= double(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < cols; ++c) {
                const double dlt = z(i, c) - stats.mean[c];
                stats.var[c] += dlt * dlt;
            }
        for (auto& v : stats.var) v /= double(n);
    } else if (mode == BnMode::frozen) {
        if (!frozen) fail(ErrorCode::invalid_argument, "frozen batch norm needs captured statistics");
        stats = *frozen;
    } else {
        stats.mean = model.params()[run_mean].data;
        stats.var = model.params()[run_var].data;
    }
    inv_std.resize(cols);
    for (std::size_t c = 0; c < cols; ++c) inv_std[c] = 1.0 / std::sqrt(stats.var[c] + eps);
    xhat = Matrix(n, cols);
    y = Matrix(n, cols);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < cols; ++c) {
            const double xh = (z(i, c) - stats.mean[c]) * inv_std[c];
            xhat(i, c) = xh;
            y(i, c) = g[c] * xh + b[c];
        }
}

// Given dy, accumulates dgamma/dbeta and returns dz.
Matrix batchnorm_backward(const Matrix& dy, const Matrix& xhat, const std::vector<double>& inv_std,
                          const std::vector<double>& gamma, BnMode mode, std::vector<double>& dgamma,
                          std::vector<double>& dbeta) {
    const std::size_t n = dy.rows;
    const std::size_t cols = dy.cols;
    Matrix dz(n, cols);
    std::vector<double> sum_dxh(cols, 0.0), sum_dxh_xh(cols, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < cols; ++c) {
            dgamma[c] += dy(i, c) * xhat(i, c);
            dbeta[c] += dy(i, c);
            const double dxh = dy(i, c) * gamma[c];
            dz(i, c) = dxh;
            sum_dxh[c] += dxh;
            sum_dxh_xh[c] += dxh * xhat(i, c);
        }
    if (mode == BnMode::train) {
        const double inv_n = 1.0 / double(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < cols; ++c)
                dz(i, c) = inv_std[c] * (dz(i, c) - inv_n * sum_dxh[c] - inv_n * xhat(i, c) * sum_dxh_xh[c]);
    } else {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < cols; ++c) dz(i, c) *= inv_std[c];
    }
    return dz;
}

Matrix mlp_forward(const TwoTowerModel& model, const TwoTowerModel::Slots::Mlp& s, Matrix x, BnMode mode,
                   const TowerStats* frozen, MlpCache& c) {
    const auto& P = model.params();
    c.mode = mode;
    matmul(x, P[s.w1], c.z1);
    Matrix y1;
    batchnorm_forward(c.z1, model, s.gamma1, s.beta1, s.mean1, s.var1, mode, frozen ? &frozen->bn1 : nullptr, c.xhat1,
                      y1, c.inv_std1, c.stats.bn1);
    c.a1 = std::move(y1);
    for (auto& v : c.a1.data) v = v > 0.0 ? v : 0.0;
    matmul(c.a1, P[s.w2], c.z2);
    batchnorm_forward(c.z2, model, s.gamma2, s.beta2, s.mean2, s.var2, mode, frozen ? &frozen->bn2 : nullptr, c.xhat2,
                      c.y, c.inv_std2, c.stats.bn2);
    const std::size_t d = c.y.cols;
    Matrix out(c.y.rows, d);
    c.norms.assign(c.y.rows, 0.0);
    for (std::size_t i = 0; i < c.y.rows; ++i) {
        double nn = 0;
        for (std::size_t k = 0; k < d; ++k) nn += c.y(i, k) * c.y(i, k);
        nn = std::sqrt(nn);
        c.norms[i] = nn;
        if (nn < 1e-12) {
            for (std::size_t k = 0; k < d; ++k) out(i, k) = 1.0 / std::sqrt(double(d));
        } else {
            for (std::size_t k = 0; k < d; ++k) out(i, k) = c.y(i, k) / nn;
        }
    }
    c.x = std::move(x);
    return out;
}

// Returns d(input).
Matrix mlp_backward(const TwoTowerModel& model, const TwoTowerModel::Slots::Mlp& s, const MlpCache& c,
                    const Matrix& d_out, Gradients& g) {
    const auto& P = model.params();
    const std::size_t n = c.y.rows;
    const std::size_t d = c.y.cols;
    Matrix dy(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        const double nn = c.norms[i];
        if (nn < 1e-12) continue;
        double dot = 0;
        for (std::size_t k = 0; k < d; ++k) dot += (c.y(i, k) / nn) * d_out(i, k);
        for (std::size_t k = 0; k < d; ++k) dy(i, k) = (d_out(i, k) - (c.y(i, k) / nn) * dot) / nn;
    }
    Matrix dz2 = batchnorm_backward(dy, c.xhat2, c.inv_std2, P[s.gamma2].data, c.mode, g.dense[s.gamma2],
                                    g.dense[s.beta2]);
    Matrix da1(n, c.a1.cols);
    for (std::size_t i = 0; i < n; ++i) vec_mat_backward(c.a1.row(i), c.a1.cols, P[s.w2], dz2.row(i), g.dense[s.w2], da1.row(i));
    for (std::size_t i = 0; i < da1.data.size(); ++i)
        if (c.a1.data[i] <= 0.0) da1.data[i] = 0.0;
    Matrix dz1 = batchnorm_backward(da1, c.xhat1, c.inv_std1, P[s.gamma1].data, c.mode, g.dense[s.gamma1],
                                    g.dense[s.beta1]);
    Matrix dx(n, c.x.cols);
    for (std::size_t i = 0; i < n; ++i) vec_mat_backward(c.x.row(i), c.x.cols, P[s.w1], dz1.row(i), g.dense[s.w1], dx.row(i));
    return dx;
}

std::vector<std::size_t> history_positions(const TwoTowerModel& model, std::size_t n_searches, std::size_t n_shops) {
    std::vector<std::size_t> pos;
    for (std::size_t i = 0; i < n_searches; ++i) pos.push_back(1 + i);
    for (std::size_t i = 0; i < n_shops; ++i) pos.push_back(1 + model.config().max_searches + i);
    return pos;
}

}  // namespace

// ---------------------------------------------------------------------------
// Featurization

QueryInput featurize_query(const TwoTowerModel& model, const QueryUserContext& ctx) {
    const auto& cfg = model.config();
    QueryInput in;
    auto groups = query_user_fields(ctx, model.locations(), cfg.features);
    for (std::size_t i = 0; i < kQueryGroups; ++i) in.groups[i] = to_ids(model, groups[i].tokens);
    if (cfg.features.history) {
        for (std::size_t i = 0; i < ctx.recent_searches.size() && i < cfg.max_searches; ++i)
            in.searches.push_back(to_ids(model, extract_ngrams(ctx.recent_searches[i])));
        for (std::size_t i = 0; i < ctx.recent_shop_clicks.size() && i < cfg.max_shops; ++i)
            in.shops.push_back(model.shop_bucket(ctx.recent_shop_clicks[i]));
    }
    return in;
}

ProductFeatures featurize_product(const TwoTowerModel& model, const ProductDoc& product, const BipartiteGraph& graph) {
    const auto& cfg = model.config();
    ProductFeatures f;
    f.product_id = product.product_id;
    auto groups = product_fields(product, model.locations(), cfg.features);
    for (std::size_t i = 0; i < kProductGroups; ++i) f.groups[i] = to_ids(model, groups[i].tokens);
    if (cfg.features.graph) {
        for (const auto& [q, c] : graph.neighbors(product.product_id)) {
            f.neighbor_text.push_back(q);
            f.neighbor_count.push_back(c);
            f.neighbor_tokens.push_back(to_ids(model, extract_ngrams(q)));
        }
    }
    f.text.assign(cfg.text_dim, 0.0);
    if (product.text_vector.size() == cfg.text_dim)
        for (std::size_t i = 0; i < cfg.text_dim; ++i) f.text[i] = product.text_vector[i];
    return f;
}

std::vector<std::uint32_t> select_neighbors(const ProductFeatures& f, std::string_view target_query, std::size_t n,
                                            Rng* rng) {
    const std::string target = normalize_text(target_query);
    std::vector<std::uint32_t> pool;
    for (std::uint32_t i = 0; i < f.neighbor_text.size(); ++i)
        if (f.neighbor_text[i] != target) pool.push_back(i);
    if (!rng || pool.size() <= n) {
        std::stable_sort(pool.begin(), pool.end(),
                         [&](std::uint32_t a, std::uint32_t b) { return f.neighbor_count[a] > f.neighbor_count[b]; });
        if (pool.size() > n) pool.resize(n);
        return pool;
    }
    std::vector<std::uint32_t> picked;
    std::vector<double> w;
    for (auto i : pool) w.push_back(double(f.neighbor_count[i]));
    double total = std::accumulate(w.begin(), w.end(), 0.0);
    while (picked.size() < n) {
        double u = rng->uniform() * total;
        std::size_t j = 0;
        for (; j + 1 < pool.size(); ++j) {
            if (w[j] <= 0) continue;
            u -= w[j];
            if (u < 0) break;
        }
        while (w[j] <= 0) --j;  // landed past the tail through rounding
        picked.push_back(pool[j]);
        total -= w[j];
        w[j] = 0;
    }
    return picked;
}

// ---------------------------------------------------------------------------
// Gradients

double* SparseRows::row(std::uint32_t r) {
    auto [it, inserted] = slot_.emplace(r, static_cast<std::uint32_t>(rows_.size()));
    if (inserted) {
        rows_.push_back(r);
        data_.resize(data_.size() + cols_, 0.0);
    }
    return data_.data() + std::size_t(it->second) * cols_;
}

const double* SparseRows::find(std::uint32_t r) const {
    auto it = slot_.find(r);
    return it == slot_.end() ? nullptr : data_.data() + std::size_t(it->second) * cols_;
}

void SparseRows::clear() {
    slot_.clear();
    rows_.clear();
    data_.clear();
}

Gradients::Gradients(const TwoTowerModel& model)
    : token(model.config().embed_dim), shop(model.config().embed_dim) {
    const auto& s = model.slots();
    dense.resize(model.params().size());
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        const auto& p = model.params()[i];
        if (!p.trainable || i == s.token_table || i == s.shop_table) continue;
        dense[i].assign(p.size(), 0.0);
    }
}

void Gradients::zero() {
    for (auto& d : dense) std::fill(d.begin(), d.end(), 0.0);
    token.clear();
    shop.clear();
}

// ---------------------------------------------------------------------------
// Transformer

void transformer_forward(const TwoTowerModel& model, std::span<const double> q_vec,
                         const std::vector<const double*>& history, const std::vector<std::size_t>& positions,
                         TransformerCache& c) {
    const auto& P = model.params();
    const auto& s = model.slots();
    const std::size_t de = model.config().embed_dim;
    const std::size_t ff = model.config().ff_dim;
    const auto& pos = P[s.position_table].data;
    c.len = 1 + history.size();
    c.x = Matrix(c.len, de);
    for (std::size_t j = 0; j < de; ++j) c.x(0, j) = q_vec[j] + pos[j];
    for (std::size_t h = 0; h < history.size(); ++h)
        for (std::size_t j = 0; j < de; ++j) c.x(h + 1, j) = history[h][j] + pos[positions[h] * de + j];

    c.q.assign(de, 0.0);
    vec_mat(c.x.row(0), de, P[s.wq], c.q.data());
    c.k = Matrix(c.len, de);
    c.v = Matrix(c.len, de);
    for (std::size_t r = 0; r < c.len; ++r) {
        vec_mat(c.x.row(r), de, P[s.wk], c.k.row(r));
        vec_mat(c.x.row(r), de, P[s.wv], c.v.row(r));
    }
    const double scale = 1.0 / std::sqrt(double(de));
    c.attn.assign(c.len, 0.0);
    double mx = -INFINITY;
    for (std::size_t r = 0; r < c.len; ++r) {
        double dot = 0;
        for (std::size_t j = 0; j < de; ++j) dot += c.q[j] * c.k(r, j);
        c.attn[r] = dot * scale;
        mx = std::max(mx, c.attn[r]);
    }
    double z = 0;
    for (auto& a : c.attn) {
        a = std::exp(a - mx);
        z += a;
    }
    for (auto& a : c.attn) a /= z;
    c.ctx.assign(de, 0.0);
    for (std::size_t r = 0; r < c.len; ++r)
        for (std::size_t j = 0; j < de; ++j) c.ctx[j] += c.attn[r] * c.v(r, j);
    c.o.assign(de, 0.0);
    vec_mat(c.ctx.data(), de, P[s.wo], c.o.data());
    const auto& ga = P[s.attn_scale].data;
    c.h.resize(de);
    for (std::size_t j = 0; j < de; ++j) c.h[j] = c.x(0, j) + ga[j] * c.o[j];
    c.ff_pre.assign(ff, 0.0);
    vec_mat(c.h.data(), de, P[s.ff_w1], c.ff_pre.data());
    const auto& b1 = P[s.ff_b1].data;
    c.ff_act.resize(ff);
    for (std::size_t j = 0; j < ff; ++j) {
        c.ff_pre[j] += b1[j];
        c.ff_act[j] = c.ff_pre[j] > 0.0 ? c.ff_pre[j] : 0.0;
    }
    c.f.assign(de, 0.0);
    vec_mat(c.ff_act.data(), ff, P[s.ff_w2], c.f.data());
    const auto& b2 = P[s.ff_b2].data;
    const auto& gf = P[s.ff_scale].data;
    c.out.resize(de);
    for (std::size_t j = 0; j < de; ++j) {
        c.f[j] += b2[j];
        c.out[j] = c.h[j] + gf[j] * c.f[j];
    }
}

std::vector<double> transformer_backward(const TwoTowerModel& model, const std::vector<std::size_t>& positions,
                                         const TransformerCache& c, std::span<const double> d_out, Matrix& d_history,
                                         Gradients& g) {
    const auto& P = model.params();
    const auto& s = model.slots();
    const std::size_t de = model.config().embed_dim;
    const std::size_t ff = model.config().ff_dim;

    std::vector<double> dh(d_out.begin(), d_out.end());
    std::vector<double> df(de);
    const auto& gf = P[s.ff_scale].data;
    for (std::size_t j = 0; j < de; ++j) {
        g.dense[s.ff_scale][j] += d_out[j] * c.f[j];
        df[j] = d_out[j] * gf[j];
        g.dense[s.ff_b2][j] += df[j];
    }
    std::vector<double> dact(ff, 0.0);
    vec_mat_backward(c.ff_act.data(), ff, P[s.ff_w2], df.data(), g.dense[s.ff_w2], dact.data());
    for (std::size_t j = 0; j < ff; ++j) {
        if (c.ff_pre[j] <= 0.0) dact[j] = 0.0;
        g.dense[s.ff_b1][j] += dact[j];
    }
    vec_mat_backward(c.h.data(), de, P[s.ff_w1], dact.data(), g.dense[s.ff_w1], dh.data());

    Matrix dx(c.len, de);
    std::vector<double> d_o(de);
    const auto& ga = P[s.attn_scale].data;
    for (std::size_t j = 0; j < de; ++j) {
        dx(0, j) += dh[j];
        g.dense[s.attn_scale][j] += dh[j] * c.o[j];
        d_o[j] = dh[j] * ga[j];
    }
    std::vector<double> dctx(de, 0.0);
    vec_mat_backward(c.ctx.data(), de, P[s.wo], d_o.data(), g.dense[s.wo], dctx.data());

    const double scale = 1.0 / std::sqrt(double(de));
    std::vector<double> da(c.len, 0.0);
    Matrix dv(c.len, de);
    double sum_a_da = 0;
    for (std::size_t r = 0; r < c.len; ++r) {
        double acc = 0;
        for (std::size_t j = 0; j < de; ++j) {
            acc += dctx[j] * c.v(r, j);
            dv(r, j) = c.attn[r] * dctx[j];
        }
        da[r] = acc;
        sum_a_da += c.attn[r] * acc;
    }
    std::vector<double> dq(de, 0.0);
    Matrix dk(c.len, de);
    for (std::size_t r = 0; r < c.len; ++r) {
        const double ds = c.attn[r] * (da[r] - sum_a_da) * scale;
        for (std::size_t j = 0; j < de; ++j) {
            dq[j] += ds * c.k(r, j);
            dk(r, j) = ds * c.q[j];
        }
    }
    vec_mat_backward(c.x.row(0), de, P[s.wq], dq.data(), g.dense[s.wq], dx.row(0));
    for (std::size_t r = 0; r < c.len; ++r) {
        vec_mat_backward(c.x.row(r), de, P[s.wk], dk.row(r), g.dense[s.wk], dx.row(r));
        vec_mat_backward(c.x.row(r), de, P[s.wv], dv.row(r), g.dense[s.wv], dx.row(r));
    }

    auto& dpos = g.dense[s.position_table];
    for (std::size_t j = 0; j < de; ++j) dpos[j] += dx(0, j);
    d_history = Matrix(c.len - 1, de);
    for (std::size_t h = 0; h + 1 < c.len; ++h)
        for (std::size_t j = 0; j < de; ++j) {
            dpos[positions[h] * de + j] += dx(h + 1, j);
            d_history(h, j) = dx(h + 1, j);
        }
    return std::vector<double>(dx.row(0), dx.row(0) + de);
}

// ---------------------------------------------------------------------------
// Towers

Matrix forward_query_tower(const TwoTowerModel& model, std::span<const QueryInput> inputs, BnMode mode,
                           QueryTowerCache* cache, const TowerStats* frozen) {
    const auto& P = model.params();
    const auto& s = model.slots();
    const std::size_t de = model.config().embed_dim;
    const Param& table = P[s.token_table];
    const Param& shops = P[s.shop_table];

    QueryTowerCache local;
    QueryTowerCache& c = cache ? *cache : local;
    c.transformer.assign(inputs.size(), TransformerCache{});
    Matrix x(inputs.size(), model.query_input_dim());
    std::vector<double> hist_buf;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const auto& in = inputs[i];
        double* row = x.row(i);
        for (std::size_t gi = 0; gi < kQueryGroups; ++gi) add_avg(table, in.groups[gi], row + gi * de);

        const std::size_t nh = in.searches.size() + in.shops.size();
        hist_buf.assign(nh * de, 0.0);
        std::vector<const double*> history;
        for (std::size_t h = 0; h < in.searches.size(); ++h) {
            add_avg(table, in.searches[h], hist_buf.data() + h * de);
            history.push_back(hist_buf.data() + h * de);
        }
        for (auto r : in.shops) history.push_back(shops.data.data() + std::size_t(r) * de);
        const auto positions = history_positions(model, in.searches.size(), in.shops.size());
        transformer_forward(model, std::span<const double>(row, de), history, positions, c.transformer[i]);
        std::copy(c.transformer[i].out.begin(), c.transformer[i].out.end(), row + kQueryGroups * de);
    }
    Matrix out = mlp_forward(model, s.query, std::move(x), mode, frozen, c.mlp);
    if (!cache) c.transformer.clear();
    return out;
}

void backward_query_tower(const TwoTowerModel& model, std::span<const QueryInput> inputs, const QueryTowerCache& c,
                          const Matrix& d_out, Gradients& g) {
    const std::size_t de = model.config().embed_dim;
    Matrix dx = mlp_backward(model, model.slots().query, c.mlp, d_out, g);
    Matrix d_hist;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const auto& in = inputs[i];
        const double* drow = dx.row(i);
        const auto positions = history_positions(model, in.searches.size(), in.shops.size());
        auto dq = transformer_backward(model, positions, c.transformer[i],
                                       std::span<const double>(drow + kQueryGroups * de, de), d_hist, g);
        for (std::size_t j = 0; j < de; ++j) dq[j] += drow[j];
        scatter_avg_grad(g.token, in.groups[0], dq.data());
        for (std::size_t gi = 1; gi < kQueryGroups; ++gi) scatter_avg_grad(g.token, in.groups[gi], drow + gi * de);
        for (std::size_t h = 0; h < in.searches.size(); ++h) scatter_avg_grad(g.token, in.searches[h], d_hist.row(h));
        for (std::size_t k = 0; k < in.shops.size(); ++k) {
            double* gs = g.shop.row(in.shops[k]);
            const double* dr = d_hist.row(in.searches.size() + k);
            for (std::size_t j = 0; j < de; ++j) gs[j] += dr[j];
        }
    }
}

Matrix forward_product_tower(const TwoTowerModel& model, std::span<const ProductInput> inputs, BnMode mode,
                             ProductTowerCache* cache, const TowerStats* frozen) {
    const auto& P = model.params();
    const auto& s = model.slots();
    const std::size_t de = model.config().embed_dim;
    const Param& table = P[s.token_table];
    Matrix x(inputs.size(), model.product_input_dim());
    std::vector<double> tmp(de);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const auto& f = *inputs[i].features;
        double* row = x.row(i);
        for (std::size_t gi = 0; gi < kProductGroups; ++gi) add_avg(table, f.groups[gi], row + gi * de);
        const auto& nb = inputs[i].neighbors;
        if (!inputs[i].fixed_graph.empty()) {
            std::copy(inputs[i].fixed_graph.begin(), inputs[i].fixed_graph.end(), row + kProductGroups * de);
        } else if (!nb.empty()) {
            double* graph = row + kProductGroups * de;
            for (auto n : nb) {
                std::fill(tmp.begin(), tmp.end(), 0.0);
                add_avg(table, f.neighbor_tokens[n], tmp.data());
                for (std::size_t j = 0; j < de; ++j) graph[j] += tmp[j] / double(nb.size());
            }
        }
        std::copy(f.text.begin(), f.text.end(), row + 5 * de);
    }
    ProductTowerCache local;
    ProductTowerCache& c = cache ? *cache : local;
    return mlp_forward(model, s.product, std::move(x), mode, frozen, c.mlp);
}

void backward_product_tower(const TwoTowerModel& model, std::span<const ProductInput> inputs,
                            const ProductTowerCache& c, const Matrix& d_out, Gradients& g) {
    const std::size_t de = model.config().embed_dim;
    Matrix dx = mlp_backward(model, model.slots().product, c.mlp, d_out, g);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const auto& f = *inputs[i].features;
        for (std::size_t gi = 0; gi < kProductGroups; ++gi) scatter_avg_grad(g.token, f.groups[gi], dx.row(i) + gi * de);
        // Graph slot: stop-gradient into the shared token table.
    }
}

void update_running_stats(TwoTowerModel& model, bool product_side, const TowerStats& stats, std::size_t batch) {
    const auto& s = product_side ? model.slots().product : model.slots().query;
    const double m = model.config().bn_momentum;
    const double unbias = batch > 1 ? double(batch) / double(batch - 1) : 1.0;
    auto upd = [&](std::size_t mean_slot, std::size_t var_slot, const BnStats& st) {
        auto& rm = model.params()[mean_slot].data;
        auto& rv = model.params()[var_slot].data;
        for (std::size_t c = 0; c < rm.size(); ++c) {
            rm[c] = m * rm[c] + (1 - m) * st.mean[c];
            rv[c] = m * rv[c] + (1 - m) * st.var[c] * unbias;
        }
    };
    upd(s.mean1, s.var1, stats.bn1);
    upd(s.mean2, s.var2, stats.bn2);
}

// ---------------------------------------------------------------------------
// Single-item operations

std::vector<double> avg_embed(const TwoTowerModel& model, const TokenBag& tokens) {
    std::vector<double> out(model.config().embed_dim, 0.0);
    add_avg(model.params()[model.slots().token_table], to_ids(model, tokens), out.data());
    return out;
}

std::vector<double> token_rep(const TwoTowerModel& model, const std::vector<TokenFieldGroup>& groups,
                              std::size_t expected_groups) {
    if (groups.size() != expected_groups)
        fail(ErrorCode::invalid_argument, "token_rep: expected " + std::to_string(expected_groups) + " groups, got " +
                                              std::to_string(groups.size()));
    const std::size_t de = model.config().embed_dim;
    std::vector<double> out(expected_groups * de, 0.0);
    for (const auto& g : groups) {
        if (g.group_id >= expected_groups) fail(ErrorCode::invalid_argument, "token_rep: group id out of range");
        auto v = avg_embed(model, g.tokens);
        std::copy(v.begin(), v.end(), out.begin() + static_cast<std::ptrdiff_t>(g.group_id * de));
    }
    return out;
}

std::vector<double> graph_encode(const TwoTowerModel& model, std::uint64_t product_id, const BipartiteGraph& graph,
                                 std::string_view target_query, std::size_t n_samples, Rng* rng) {
    const std::size_t de = model.config().embed_dim;
    std::vector<double> out(de, 0.0);
    ProductFeatures f;
    for (const auto& [q, c] : graph.neighbors(product_id)) {
        f.neighbor_text.push_back(q);
        f.neighbor_count.push_back(c);
        f.neighbor_tokens.push_back(to_ids(model, extract_ngrams(q)));
    }
    const auto picked = select_neighbors(f, target_query, n_samples, rng);
    if (picked.empty()) return out;
    std::vector<double> tmp(de);
    const Param& table = model.params()[model.slots().token_table];
    for (auto n : picked) {
        std::fill(tmp.begin(), tmp.end(), 0.0);
        add_avg(table, f.neighbor_tokens[n], tmp.data());
        for (std::size_t j = 0; j < de; ++j) out[j] += tmp[j] / double(picked.size());
    }
    return out;
}

std::vector<double> session_transformer(const TwoTowerModel& model, std::span<const double> q_vec,
                                        const std::vector<std::vector<double>>& search_vecs,
                                        const std::vector<std::vector<double>>& shop_vecs,
                                        const std::vector<char>& search_mask, const std::vector<char>& shop_mask) {
    const auto& cfg = model.config();
    if (search_vecs.size() > cfg.max_searches || shop_vecs.size() > cfg.max_shops)
        fail(ErrorCode::invalid_argument, "session_transformer: history longer than configured maximum");
    if ((!search_mask.empty() && search_mask.size() != search_vecs.size()) ||
        (!shop_mask.empty() && shop_mask.size() != shop_vecs.size()))
        fail(ErrorCode::invalid_argument, "session_transformer: mask length mismatch");
    std::vector<const double*> history;
    std::vector<std::size_t> positions;
    for (std::size_t i = 0; i < search_vecs.size(); ++i) {
        if (!search_mask.empty() && !search_mask[i]) continue;
        history.push_back(search_vecs[i].data());
        positions.push_back(1 + i);
    }
    for (std::size_t i = 0; i < shop_vecs.size(); ++i) {
        if (!shop_mask.empty() && !shop_mask[i]) continue;
        history.push_back(shop_vecs[i].data());
        positions.push_back(1 + cfg.max_searches + i);
    }
    TransformerCache c;
    transformer_forward(model, q_vec, history, positions, c);
    return c.out;
}

std::vector<double> product_tower(const TwoTowerModel& model, const ProductDoc& product, const BipartiteGraph& graph) {
    const auto f = featurize_product(model, product, graph);
    ProductInput in{&f, select_neighbors(f, "", model.config().graph_samples, nullptr), {}};
    Matrix out = forward_product_tower(model, std::span<const ProductInput>(&in, 1), BnMode::inference);
    return out.data;
}

std::vector<double> query_user_tower(const TwoTowerModel& model, const QueryUserContext& ctx) {
    const auto in = featurize_query(model, ctx);
    Matrix out = forward_query_tower(model, std::span<const QueryInput>(&in, 1), BnMode::inference);
    return out.data;
}

double score(std::span<const double> a, std::span<const double> b) {
    double s = 0;
    const std::size_t n = std::min(a.size(), b.size());
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

Matrix embed_products(const TwoTowerModel& model, const ProductCorpus& corpus, const BipartiteGraph& graph) {
    Matrix out(corpus.size(), model.config().out_dim);
    constexpr std::size_t kChunk = 512;
    std::vector<ProductFeatures> feats;
    std::vector<ProductInput> inputs;
    for (std::size_t start = 0; start < corpus.size(); start += kChunk) {
        const std::size_t end = std::min(corpus.size(), start + kChunk);
        feats.clear();
        inputs.clear();
        feats.reserve(end - start);
        for (std::size_t i = start; i < end; ++i) feats.push_back(featurize_product(model, corpus[i], graph));
        for (const auto& f : feats)
            inputs.push_back(ProductInput{&f, select_neighbors(f, "", model.config().graph_samples, nullptr), {}});
        Matrix part = forward_product_tower(model, inputs, BnMode::inference);
        std::copy(part.data.begin(), part.data.end(), out.row(start));
    }
    return out;
}

Matrix embed_queries(const TwoTowerModel& model, const std::vector<QueryUserContext>& contexts) {
    Matrix out(contexts.size(), model.config().out_dim);
    constexpr std::size_t kChunk = 512;
    std::vector<QueryInput> inputs;
    for (std::size_t start = 0; start < contexts.size(); start += kChunk) {
        const std::size_t end = std::min(contexts.size(), start + kChunk);
        inputs.clear();
        for (std::size_t i = start; i < end; ++i) inputs.push_back(featurize_query(model, contexts[i]));
        Matrix part = forward_query_tower(model, inputs, BnMode::inference);
        std::copy(part.data.begin(), part.data.end(), out.row(start));
    }
    return out;
}

}  // namespace ueppr
