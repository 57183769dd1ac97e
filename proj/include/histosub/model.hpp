#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace histosub {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixView = Eigen::Map<RowMatrix>;
using ConstMatrixView = Eigen::Map<const RowMatrix>;
using VectorView = Eigen::Map<Eigen::VectorXd>;
using ConstVectorView = Eigen::Map<const Eigen::VectorXd>;

/// Full dual-scale model, or the patch-only attention-MIL baseline.
enum class ModelMode { DualScale, AttMil };

/// Learnable distance-bias scale, or the raw-pixel variant with the scale fixed at 1.
enum class LambdaMode { Learnable, FixedUnit };

const char* to_string(ModelMode mode);
ModelMode parse_model_mode(std::string_view s);

/// Pixel width at 40x of one 256 px patch tiled at 20x.
inline constexpr double kPatchSpanPx = 512.0;

struct ModelDims {
    int patch_dim = 768;
    int cell_dim = 32;
    int att_dim = 128;
    ModelMode mode = ModelMode::DualScale;
    LambdaMode lambda_mode = LambdaMode::Learnable;
    /// Add a 2D sinusoidal encoding of the grid position before attention scoring.
    bool pos_enc = false;

    bool operator==(const ModelDims&) const = default;
};

struct CellInstance {
    Eigen::VectorXd embedding;
    double x = 0.0;  // centroid, pixels at 40x
    double y = 0.0;
    int cell_class = 0;
};

struct PatchInstance {
    Eigen::VectorXd embedding;
    int gx = 0;  // grid index at 20x
    int gy = 0;
};

/// Binary target: BASAL = 1, CLASSICAL = 0.
struct SlideBag {
    std::string slide_id;
    std::vector<PatchInstance> patches;
    std::vector<CellInstance> cells;
    std::optional<int> label;
};

/**
 * All learnable parameters in one contiguous buffer.
 *
 * Layout: cls_token, W_q, W_k, W_v, lambda_dist, W_fuse, attn_V, attn_U,
 * attn_w, head_w, head_b. The cell-branch blocks are empty in AttMil mode.
 * Gradients use the same type and layout, which keeps the optimizer and
 * finite-difference checks independent of the architecture.
 */
class ModelParams {
public:
    explicit ModelParams(const ModelDims& dims);

    /// Glorot-uniform matrices, N(0, 0.02^2) CLS token, lambda 1/512 (or 1), zero bias.
    static ModelParams initialize(const ModelDims& dims, std::uint64_t seed);

    const ModelDims& dims() const { return dims_; }
    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    std::size_t size() const { return data_.size(); }

    void set_zero();

    VectorView cls_token() { return vec(off_.cls, dims_.cell_dim * has_cells()); }
    ConstVectorView cls_token() const { return vec(off_.cls, dims_.cell_dim * has_cells()); }
    MatrixView w_q() { return mat(off_.wq, cd(), cd()); }
    ConstMatrixView w_q() const { return mat(off_.wq, cd(), cd()); }
    MatrixView w_k() { return mat(off_.wk, cd(), cd()); }
    ConstMatrixView w_k() const { return mat(off_.wk, cd(), cd()); }
    MatrixView w_v() { return mat(off_.wv, cd(), cd()); }
    ConstMatrixView w_v() const { return mat(off_.wv, cd(), cd()); }
    double& lambda_dist() { return data_[off_.lambda]; }
    double lambda_dist() const { return has_cells() ? data_[off_.lambda] : 0.0; }
    MatrixView w_fuse() { return mat(off_.fuse, dims_.patch_dim * has_cells(), dims_.patch_dim * cd()); }
    ConstMatrixView w_fuse() const { return mat(off_.fuse, dims_.patch_dim * has_cells(), dims_.patch_dim * cd()); }
    MatrixView attn_v() { return mat(off_.att_v, dims_.att_dim, dims_.patch_dim); }
    ConstMatrixView attn_v() const { return mat(off_.att_v, dims_.att_dim, dims_.patch_dim); }
    MatrixView attn_u() { return mat(off_.att_u, dims_.att_dim, dims_.patch_dim); }
    ConstMatrixView attn_u() const { return mat(off_.att_u, dims_.att_dim, dims_.patch_dim); }
    VectorView attn_w() { return vec(off_.att_w, dims_.att_dim); }
    ConstVectorView attn_w() const { return vec(off_.att_w, dims_.att_dim); }
    VectorView head_w() { return vec(off_.head_w, dims_.patch_dim); }
    ConstVectorView head_w() const { return vec(off_.head_w, dims_.patch_dim); }
    double& head_b() { return data_[off_.head_b]; }
    double head_b() const { return data_[off_.head_b]; }

    /// Offset of lambda_dist in data(), or nullopt when the model has no cell branch.
    std::optional<std::size_t> lambda_offset() const;

    /// Named blocks (name, offset, length), in layout order.
    struct Block {
        std::string name;
        std::size_t offset;
        std::size_t length;
    };
    std::vector<Block> blocks() const;

private:
    struct Offsets {
        std::size_t cls, wq, wk, wv, lambda, fuse, att_v, att_u, att_w, head_w, head_b, total;
    };

    int has_cells() const { return dims_.mode == ModelMode::DualScale ? 1 : 0; }
    int cd() const { return dims_.cell_dim * has_cells(); }

    VectorView vec(std::size_t off, Eigen::Index n) { return {data_.data() + off, n}; }
    ConstVectorView vec(std::size_t off, Eigen::Index n) const { return {data_.data() + off, n}; }
    MatrixView mat(std::size_t off, Eigen::Index r, Eigen::Index c) { return {data_.data() + off, r, c}; }
    ConstMatrixView mat(std::size_t off, Eigen::Index r, Eigen::Index c) const {
        return {data_.data() + off, r, c};
    }

    ModelDims dims_;
    Offsets off_{};
    std::vector<double> data_;
};

/// Patch index -> indices into bag.cells, plus cells whose grid square has no patch.
struct CellAssignment {
    std::vector<std::vector<std::size_t>> cells_per_patch;
    std::size_t dropped = 0;
};

/// Cell at (x, y) belongs to grid square (floor(x/512), floor(y/512)). Negative coordinates are rejected.
CellAssignment assign_cells_to_patches(const SlideBag& bag);

/**
 * CLS output of one spatially biased self-attention layer over a patch's cells.
 *
 * Logits for the CLS row are q_cls . k_j / sqrt(d) - lambda * dist_j, where
 * dist_j is the distance from cell j to the mean centroid of the patch's cells
 * (0 for the CLS token itself). An empty patch yields W_v * cls_token.
 */
Eigen::VectorXd spatial_attention_pool(std::span<const CellInstance> cells, const ModelParams& params);

/// W_fuse * vec(patch ⊗ cell), flattened row-major with the patch index major.
Eigen::VectorXd fuse(const Eigen::VectorXd& patch_emb, const Eigen::VectorXd& cls_out, ConstMatrixView w_fuse);

struct MilResult {
    Eigen::VectorXd slide_emb;
    Eigen::VectorXd attention;
};

/// Gated attention-MIL pooling of instance rows `instances` (k x patch_dim).
MilResult attmil_aggregate(const RowMatrix& instances, std::span<const std::pair<int, int>> grid,
                           const ModelParams& params);

/// 2D sinusoidal encoding: the first half of the dims encode gx, the second half gy.
Eigen::VectorXd grid_position_encoding(int gx, int gy, int dim);

struct ForwardResult {
    double prob = 0.5;
    double logit = 0.0;
    Eigen::VectorXd attention;
    std::size_t dropped_cells = 0;
};

ForwardResult forward(const SlideBag& bag, const ModelParams& params);

inline constexpr double kProbEpsilon = 1e-12;

/// Binary cross-entropy with p clamped to [1e-12, 1 - 1e-12].
double bce_loss(double p, int y);

struct BackwardResult {
    ModelParams grad;
    double loss;
    double prob;
};

/// Exact gradient of bce_loss(forward(bag), y) with respect to every parameter.
BackwardResult backward(const SlideBag& bag, const ModelParams& params, int y);

/// Same gradient written into a caller-owned buffer of matching layout; returns the loss.
double backward_into(const SlideBag& bag, const ModelParams& params, int y, ModelParams& grad, double* prob = nullptr);

struct AttentionRow {
    int gx;
    int gy;
    double weight;
    int mask_value;
};

/// MIL attention per patch, min-max scaled to 0..255 (all-equal weights map to 255).
std::vector<AttentionRow> export_attention(const SlideBag& bag, const ModelParams& params);

std::vector<int> attention_mask_values(std::span<const double> weights);

}  // namespace histosub
