#include "histosub/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "histosub/error.hpp"

namespace histosub {

const char* to_string(ModelMode mode) { return mode == ModelMode::DualScale ? "pansubnet" : "attmil"; }

ModelMode parse_model_mode(std::string_view s) {
    if (s == "pansubnet") return ModelMode::DualScale;
    if (s == "attmil") return ModelMode::AttMil;
    throw InputError("unknown model mode '" + std::string(s) + "' (expected pansubnet|attmil)");
}

ModelParams::ModelParams(const ModelDims& dims) : dims_(dims) {
    if (dims.patch_dim < 1 || dims.cell_dim < 1 || dims.att_dim < 1) throw InputError("model dimensions must be positive");
    const auto d = static_cast<std::size_t>(cd());
    const auto p = static_cast<std::size_t>(dims.patch_dim);
    const auto a = static_cast<std::size_t>(dims.att_dim);
    const auto cells = static_cast<std::size_t>(has_cells());
    std::size_t at = 0;
    auto take = [&at](std::size_t n) {
        const std::size_t o = at;
        at += n;
        return o;
    };
    off_.cls = take(d);
    off_.wq = take(d * d);
    off_.wk = take(d * d);
    off_.wv = take(d * d);
    off_.lambda = take(cells);
    off_.fuse = take(cells * p * p * d);
    off_.att_v = take(a * p);
    off_.att_u = take(a * p);
    off_.att_w = take(a);
    off_.head_w = take(p);
    off_.head_b = take(1);
    off_.total = at;
    data_.assign(at, 0.0);
}

void ModelParams::set_zero() { std::fill(data_.begin(), data_.end(), 0.0); }

std::optional<std::size_t> ModelParams::lambda_offset() const {
    if (!has_cells()) return std::nullopt;
    return off_.lambda;
}

std::vector<ModelParams::Block> ModelParams::blocks() const {
    return {
        {"cls_token", off_.cls, off_.wq - off_.cls},   {"w_q", off_.wq, off_.wk - off_.wq},
        {"w_k", off_.wk, off_.wv - off_.wk},           {"w_v", off_.wv, off_.lambda - off_.wv},
        {"lambda_dist", off_.lambda, off_.fuse - off_.lambda},
        {"w_fuse", off_.fuse, off_.att_v - off_.fuse}, {"attn_v", off_.att_v, off_.att_u - off_.att_v},
        {"attn_u", off_.att_u, off_.att_w - off_.att_u}, {"attn_w", off_.att_w, off_.head_w - off_.att_w},
        {"head_w", off_.head_w, off_.head_b - off_.head_w}, {"head_b", off_.head_b, off_.total - off_.head_b},
    };
}

ModelParams ModelParams::initialize(const ModelDims& dims, std::uint64_t seed) {
    ModelParams p(dims);
    std::mt19937_64 rng(seed);
    auto glorot = [&rng](auto&& m, double fan_in, double fan_out) {
        const double a = std::sqrt(6.0 / (fan_in + fan_out));
        std::uniform_real_distribution<double> u(-a, a);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    };
    const double pd = dims.patch_dim;
    const double ad = dims.att_dim;
    if (dims.mode == ModelMode::DualScale) {
        const double cdim = dims.cell_dim;
        std::normal_distribution<double> n(0.0, 0.02);
        for (auto& v : p.cls_token()) v = n(rng);
        glorot(p.w_q(), cdim, cdim);
        glorot(p.w_k(), cdim, cdim);
        glorot(p.w_v(), cdim, cdim);
        p.lambda_dist() = dims.lambda_mode == LambdaMode::FixedUnit ? 1.0 : 1.0 / kPatchSpanPx;
        glorot(p.w_fuse(), pd * cdim, pd);
    }
    glorot(p.attn_v(), pd, ad);
    glorot(p.attn_u(), pd, ad);
    glorot(p.attn_w(), ad, 1.0);
    glorot(p.head_w(), pd, 1.0);
    p.head_b() = 0.0;
    return p;
}

CellAssignment assign_cells_to_patches(const SlideBag& bag) {
    std::map<std::pair<long long, long long>, std::size_t> patch_at;
    for (std::size_t k = 0; k < bag.patches.size(); ++k) {
        const auto& pt = bag.patches[k];
        if (!patch_at.emplace(std::pair<long long, long long>{pt.gx, pt.gy}, k).second) {
            throw InputError("slide '" + bag.slide_id + "' has duplicate patch grid (" + std::to_string(pt.gx) + "," +
                             std::to_string(pt.gy) + ")");
        }
    }
    CellAssignment out;
    out.cells_per_patch.resize(bag.patches.size());
    for (std::size_t c = 0; c < bag.cells.size(); ++c) {
        const auto& cell = bag.cells[c];
        if (!std::isfinite(cell.x) || !std::isfinite(cell.y) || cell.x < 0.0 || cell.y < 0.0) {
            throw InputError("slide '" + bag.slide_id + "' cell " + std::to_string(c) + " has invalid centroid");
        }
        const auto gx = static_cast<long long>(std::floor(cell.x / kPatchSpanPx));
        const auto gy = static_cast<long long>(std::floor(cell.y / kPatchSpanPx));
        auto it = patch_at.find({gx, gy});
        if (it == patch_at.end()) {
            ++out.dropped;
        } else {
            out.cells_per_patch[it->second].push_back(c);
        }
    }
    return out;
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void softmax_inplace(Eigen::VectorXd& v) {
    const double mx = v.maxCoeff();
    v = (v.array() - mx).exp();
    v /= v.sum();
}

// Intermediate values of the CLS pooling for one patch.
struct PoolTrace {
    RowMatrix tokens;      // (m+1) x d, row 0 = CLS
    Eigen::VectorXd dist;  // (m+1), distance to the CLS anchor
    RowMatrix keys;        // (m+1) x d
    Eigen::VectorXd q0;
    Eigen::VectorXd pi;
    Eigen::VectorXd tbar;
    Eigen::VectorXd out;
};

void check_cell_dim(const Eigen::VectorXd& e, const ModelParams& params) {
    if (e.size() != params.dims().cell_dim) {
        throw InputError("cell embedding has dim " + std::to_string(e.size()) + ", model expects " +
                         std::to_string(params.dims().cell_dim));
    }
}

template <typename CellAt>
void pool_forward(std::size_t m, CellAt&& cell_at, const ModelParams& params, PoolTrace& t) {
    const int d = params.dims().cell_dim;
    t.tokens.resize(static_cast<Eigen::Index>(m + 1), d);
    t.dist.setZero(static_cast<Eigen::Index>(m + 1));
    t.tokens.row(0) = params.cls_token().transpose();
    double cx = 0.0;
    double cy = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        const CellInstance& c = cell_at(j);
        check_cell_dim(c.embedding, params);
        t.tokens.row(static_cast<Eigen::Index>(j + 1)) = c.embedding.transpose();
        cx += c.x;
        cy += c.y;
    }
    if (m > 0) {
        cx /= static_cast<double>(m);
        cy /= static_cast<double>(m);
        for (std::size_t j = 0; j < m; ++j) {
            const CellInstance& c = cell_at(j);
            t.dist(static_cast<Eigen::Index>(j + 1)) = std::hypot(c.x - cx, c.y - cy);
        }
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    t.q0 = params.w_q() * params.cls_token();
    t.keys.noalias() = t.tokens * params.w_k().transpose();
    t.pi = (t.keys * t.q0) * scale - params.lambda_dist() * t.dist;
    softmax_inplace(t.pi);
    t.tbar.noalias() = t.tokens.transpose() * t.pi;
    t.out.noalias() = params.w_v() * t.tbar;
}

// Accumulates parameter gradients given d(loss)/d(pool output).
void pool_backward(const PoolTrace& t, const Eigen::VectorXd& dout, const ModelParams& params, ModelParams& g) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(params.dims().cell_dim));
    g.w_v().noalias() += dout * t.tbar.transpose();
    const Eigen::VectorXd dtbar = params.w_v().transpose() * dout;
    const Eigen::VectorXd dpi = t.tokens * dtbar;
    const Eigen::VectorXd da = t.pi.array() * (dpi.array() - t.pi.dot(dpi));
    if (params.dims().lambda_mode == LambdaMode::Learnable) g.lambda_dist() -= da.dot(t.dist);
    const Eigen::VectorXd dq0 = (t.keys.transpose() * da) * scale;
    const RowMatrix dkeys = (da * t.q0.transpose()) * scale;
    g.w_k().noalias() += dkeys.transpose() * t.tokens;
    g.w_q().noalias() += dq0 * params.cls_token().transpose();
    Eigen::VectorXd dcls = t.pi(0) * dtbar;
    dcls.noalias() += params.w_k().transpose() * dkeys.row(0).transpose();
    dcls.noalias() += params.w_q().transpose() * dq0;
    g.cls_token() += dcls;
}

// Everything the backward pass needs from one forward evaluation.
struct Trace {
    std::vector<PoolTrace> pools;
    RowMatrix x;      // k x (patch_dim * cell_dim), outer products
    RowMatrix f;      // k x patch_dim, instances
    RowMatrix u_in;   // f plus optional positional encoding
    RowMatrix gate_a; // tanh branch
    RowMatrix gate_b; // sigmoid branch
    Eigen::VectorXd alpha;
    Eigen::VectorXd z;
    double logit = 0.0;
    double prob = 0.5;
    std::size_t dropped = 0;
};

void mil_forward(const ModelParams& params, const std::vector<std::pair<int, int>>& grid, Trace& t) {
    const int pdim = params.dims().patch_dim;
    t.u_in = t.f;
    if (params.dims().pos_enc) {
        for (std::size_t k = 0; k < grid.size(); ++k) {
            t.u_in.row(static_cast<Eigen::Index>(k)) +=
                grid_position_encoding(grid[k].first, grid[k].second, pdim).transpose();
        }
    }
    t.gate_a = (t.u_in * params.attn_v().transpose()).array().tanh();
    t.gate_b = (t.u_in * params.attn_u().transpose()).unaryExpr([](double v) { return sigmoid(v); });
    t.alpha = t.gate_a.cwiseProduct(t.gate_b) * params.attn_w();
    softmax_inplace(t.alpha);
    t.z.noalias() = t.f.transpose() * t.alpha;
}

Trace run_forward(const SlideBag& bag, const ModelParams& params) {
    const auto& dims = params.dims();
    if (bag.patches.empty()) throw InputError("slide '" + bag.slide_id + "' has no patches");
    const auto k = static_cast<Eigen::Index>(bag.patches.size());
    Trace t;
    t.f.resize(k, dims.patch_dim);
    std::vector<std::pair<int, int>> grid;
    grid.reserve(bag.patches.size());
    for (Eigen::Index i = 0; i < k; ++i) {
        const auto& pt = bag.patches[static_cast<std::size_t>(i)];
        if (pt.embedding.size() != dims.patch_dim) {
            throw InputError("slide '" + bag.slide_id + "' patch embedding has dim " + std::to_string(pt.embedding.size()) +
                             ", model expects " + std::to_string(dims.patch_dim));
        }
        grid.emplace_back(pt.gx, pt.gy);
    }

    if (dims.mode == ModelMode::DualScale) {
        const auto assignment = assign_cells_to_patches(bag);
        t.dropped = assignment.dropped;
        const int d = dims.cell_dim;
        t.pools.resize(bag.patches.size());
        t.x.resize(k, static_cast<Eigen::Index>(dims.patch_dim) * d);
        for (Eigen::Index i = 0; i < k; ++i) {
            const auto& idx = assignment.cells_per_patch[static_cast<std::size_t>(i)];
            auto& pool = t.pools[static_cast<std::size_t>(i)];
            pool_forward(idx.size(), [&](std::size_t j) -> const CellInstance& { return bag.cells[idx[j]]; }, params,
                         pool);
            const auto& p = bag.patches[static_cast<std::size_t>(i)].embedding;
            Eigen::Map<RowMatrix> outer(t.x.row(i).data(), dims.patch_dim, d);
            outer.noalias() = p * pool.out.transpose();
        }
        t.f.noalias() = t.x * params.w_fuse().transpose();
    } else {
        for (Eigen::Index i = 0; i < k; ++i) t.f.row(i) = bag.patches[static_cast<std::size_t>(i)].embedding.transpose();
    }

    mil_forward(params, grid, t);
    t.logit = params.head_w().dot(t.z) + params.head_b();
    t.prob = sigmoid(t.logit);
    return t;
}

}  // namespace

Eigen::VectorXd spatial_attention_pool(std::span<const CellInstance> cells, const ModelParams& params) {
    if (params.dims().mode != ModelMode::DualScale) throw InputError("cell pooling requires the dual-scale model");
    PoolTrace t;
    pool_forward(cells.size(), [&](std::size_t j) -> const CellInstance& { return cells[j]; }, params, t);
    return t.out;
}

Eigen::VectorXd fuse(const Eigen::VectorXd& patch_emb, const Eigen::VectorXd& cls_out, ConstMatrixView w_fuse) {
    if (w_fuse.rows() != patch_emb.size() || w_fuse.cols() != patch_emb.size() * cls_out.size()) {
        throw InputError("fuse: W_fuse shape does not match patch/cell dims");
    }
    RowMatrix outer = patch_emb * cls_out.transpose();
    return w_fuse * Eigen::Map<const Eigen::VectorXd>(outer.data(), outer.size());
}

Eigen::VectorXd grid_position_encoding(int gx, int gy, int dim) {
    Eigen::VectorXd pe = Eigen::VectorXd::Zero(dim);
    const int half = dim / 2;
    const int pairs = half / 2;
    for (int j = 0; j < pairs; ++j) {
        const double freq = std::pow(10000.0, -2.0 * j / static_cast<double>(half));
        pe(2 * j) = std::sin(gx * freq);
        pe(2 * j + 1) = std::cos(gx * freq);
        pe(half + 2 * j) = std::sin(gy * freq);
        pe(half + 2 * j + 1) = std::cos(gy * freq);
    }
    return pe;
}

MilResult attmil_aggregate(const RowMatrix& instances, std::span<const std::pair<int, int>> grid,
                           const ModelParams& params) {
    if (instances.rows() < 1) throw InputError("attention-MIL needs at least one instance");
    if (instances.cols() != params.dims().patch_dim) throw InputError("attention-MIL instance dim mismatch");
    if (params.dims().pos_enc && grid.size() != static_cast<std::size_t>(instances.rows())) {
        throw InputError("attention-MIL grid coordinates missing");
    }
    Trace t;
    t.f = instances;
    std::vector<std::pair<int, int>> g(grid.begin(), grid.end());
    g.resize(static_cast<std::size_t>(instances.rows()));
    mil_forward(params, g, t);
    return {t.z, t.alpha};
}

ForwardResult forward(const SlideBag& bag, const ModelParams& params) {
    auto t = run_forward(bag, params);
    return {t.prob, t.logit, std::move(t.alpha), t.dropped};
}

double bce_loss(double p, int y) {
    const double pc = std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon);
    return y == 1 ? -std::log(pc) : -std::log(1.0 - pc);
}

BackwardResult backward(const SlideBag& bag, const ModelParams& params, int y) {
    ModelParams g(params.dims());
    double prob = 0.5;
    const double loss = backward_into(bag, params, y, g, &prob);
    return {std::move(g), loss, prob};
}

double backward_into(const SlideBag& bag, const ModelParams& params, int y, ModelParams& g, double* prob) {
    if (y != 0 && y != 1) throw InputError("label must be 0 or 1");
    if (g.size() != params.size()) throw InputError("gradient buffer does not match the parameter layout");
    const auto t = run_forward(bag, params);
    const auto& dims = params.dims();
    // The cell-branch blocks accumulate per patch; every other block is assigned below.
    std::fill_n(g.data().begin(), g.blocks()[5].offset, 0.0);

    // Clamping in bce_loss is flat outside [eps, 1-eps].
    const bool clamped = t.prob < kProbEpsilon || t.prob > 1.0 - kProbEpsilon;
    const double dlogit = clamped ? 0.0 : t.prob - y;
    g.head_w() = dlogit * t.z;
    g.head_b() = dlogit;
    const Eigen::VectorXd dz = dlogit * params.head_w();

    RowMatrix df = t.alpha * dz.transpose();
    const Eigen::VectorXd dalpha = t.f * dz;
    const Eigen::VectorXd ds = t.alpha.array() * (dalpha.array() - t.alpha.dot(dalpha));
    const RowMatrix gated = t.gate_a.cwiseProduct(t.gate_b);
    g.attn_w() = gated.transpose() * ds;
    const RowMatrix dgate = ds * params.attn_w().transpose();
    const RowMatrix dpre_v = dgate.cwiseProduct(t.gate_b).cwiseProduct((1.0 - t.gate_a.array().square()).matrix());
    const RowMatrix dpre_u =
        dgate.cwiseProduct(t.gate_a).cwiseProduct(t.gate_b.cwiseProduct((1.0 - t.gate_b.array()).matrix()));
    g.attn_v().noalias() = dpre_v.transpose() * t.u_in;
    g.attn_u().noalias() = dpre_u.transpose() * t.u_in;
    df.noalias() += dpre_v * params.attn_v();
    df.noalias() += dpre_u * params.attn_u();

    if (dims.mode == ModelMode::DualScale) {
        g.w_fuse().noalias() = df.transpose() * t.x;
        const RowMatrix dx = df * params.w_fuse();
        const int d = dims.cell_dim;
        for (std::size_t i = 0; i < bag.patches.size(); ++i) {
            Eigen::Map<const RowMatrix> douter(dx.row(static_cast<Eigen::Index>(i)).data(), dims.patch_dim, d);
            const Eigen::VectorXd dcls_out = douter.transpose() * bag.patches[i].embedding;
            pool_backward(t.pools[i], dcls_out, params, g);
        }
    }
    if (prob) *prob = t.prob;
    return bce_loss(t.prob, y);
}

std::vector<int> attention_mask_values(std::span<const double> weights) {
    std::vector<int> out(weights.size(), 255);
    if (weights.empty()) return out;
    const auto [mn, mx] = std::minmax_element(weights.begin(), weights.end());
    const double lo = *mn;
    const double range = *mx - lo;
    if (!(range > 0.0)) return out;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        out[i] = static_cast<int>(std::lround(255.0 * (weights[i] - lo) / range));
    }
    return out;
}

std::vector<AttentionRow> export_attention(const SlideBag& bag, const ModelParams& params) {
    const auto result = forward(bag, params);
    std::span<const double> w(result.attention.data(), static_cast<std::size_t>(result.attention.size()));
    const auto masks = attention_mask_values(w);
    std::vector<AttentionRow> rows;
    rows.reserve(bag.patches.size());
    for (std::size_t k = 0; k < bag.patches.size(); ++k) {
        rows.push_back({bag.patches[k].gx, bag.patches[k].gy, w[k], masks[k]});
    }
    return rows;
}

}  // namespace histosub
