#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>

#include "handdiff/nn.hpp"
#include "handdiff/render.hpp"

namespace handdiff {

// Feature-token fusion: prior averaging with projection, transformer
// integration with image-length truncation, and the distillation objective
// that trains a small raster encoder to predict frozen teacher tokens.

struct FeatureBundle {
    Tensor image_tokens;              // [l, d]
    Tensor keypoint_tokens;           // [l_p, d_p]
    Tensor segmentation_tokens;       // [l_p, d_p]
    Tensor depth_tokens;              // [l_p, d_p]
    Tensor fused_tokens;              // [l_p, d]
    Tensor integrated_tokens;         // [l, d]
    int image_len = 0;
};

// F_a = proj((F_k + F_s + F_d) / 3); exactly permutation invariant
Graph::Id fuse_priors(Graph& g, Graph::Id f_k, Graph::Id f_s, Graph::Id f_d, const Affine& proj);
Tensor fuse_priors(const Tensor& f_k, const Tensor& f_s, const Tensor& f_d, const Affine& proj);

// concat <F_i, F_a>, run the encoder, keep the first image_len tokens
Graph::Id integrate(Graph& g, Graph::Id image_tokens, Graph::Id fused_tokens,
                    const TransformerEncoder& encoder, int image_len);
Tensor integrate(const Tensor& image_tokens, const Tensor& fused_tokens,
                 const TransformerEncoder& encoder, int image_len);

// raster inputs fed to the teacher and the student: keypoint splat map,
// merged silhouette, merged normalized depth
using PriorGrids = std::array<Grid<double>, 3>;

PriorGrids make_prior_grids(const PriorMaps& maps);
uint64_t prior_grids_content_hash(const PriorGrids& grids);

struct PriorNetConfig {
    int grid = 64;
    int patch = 16;     // grid/patch squared tokens per modality
    int token_dim = 64;
    int heads = 2;
    int layers = 1;
    bool joint = false;  // true: one encoder over all modalities (student default)

    int tokens_per_modality() const {
        const int side = grid / patch;
        return side * side;
    }
};

class PriorTokenNet {
  public:
    PriorTokenNet(const PriorNetConfig& cfg, uint64_t init_seed);

    std::array<Tensor, 3> forward(const PriorGrids& grids) const;

    // one distillation step: MSE against the teacher tokens over the batch,
    // gradient accumulation in index order, one Adam update
    double distill_batch(std::span<const PriorGrids> grids,
                         std::span<const std::array<Tensor, 3>> teacher_tokens, Adam& adam);

    void copy_weights_from(const PriorTokenNet& other);
    ParamStore& params() { return store_; }
    const PriorNetConfig& config() const { return cfg_; }

    void save(const std::string& path) const;
    void load(const std::string& path);

  private:
    std::array<Graph::Id, 3> build(Graph& g, const PriorGrids& grids) const;

    PriorNetConfig cfg_;
    ParamStore store_;
    std::array<Affine, 3> patch_embed_;
    Param* pos_embed_ = nullptr;                    // per-modality token positions
    std::array<TransformerEncoder, 3> branch_;      // separate mode
    TransformerEncoder joint_encoder_;              // joint mode
    std::array<Affine, 3> head_;                    // joint mode output heads
};

}  // namespace handdiff
