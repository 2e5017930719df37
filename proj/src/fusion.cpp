#include "handdiff/fusion.hpp"

#include <cmath>
#include <cstring>

#include "handdiff/error.hpp"

namespace handdiff {

Graph::Id fuse_priors(Graph& g, Graph::Id f_k, Graph::Id f_s, Graph::Id f_d, const Affine& proj) {
    const auto mean = g.symmetric_mean3(f_k, f_s, f_d);
    return proj.apply(g, mean);
}

Tensor fuse_priors(const Tensor& f_k, const Tensor& f_s, const Tensor& f_d, const Affine& proj) {
    Graph g;
    return g.value(fuse_priors(g, g.leaf(f_k), g.leaf(f_s), g.leaf(f_d), proj));
}

Graph::Id integrate(Graph& g, Graph::Id image_tokens, Graph::Id fused_tokens,
                    const TransformerEncoder& encoder, int image_len) {
    const auto both = g.concat_rows({image_tokens, fused_tokens});
    const auto encoded = encoder.apply(g, both);
    return g.slice_rows(encoded, 0, image_len);
}

Tensor integrate(const Tensor& image_tokens, const Tensor& fused_tokens,
                 const TransformerEncoder& encoder, int image_len) {
    Graph g;
    return g.value(integrate(g, g.leaf(image_tokens), g.leaf(fused_tokens), encoder, image_len));
}

PriorGrids make_prior_grids(const PriorMaps& maps) {
    const int w = maps.silhouette_left.width, h = maps.silhouette_left.height;

    Grid<double> kpt(w, h, 0.0);
    for (const auto* kps : {&maps.keypoints_left, &maps.keypoints_right})
        for (const Vec2& p : *kps) {
            const int x = static_cast<int>(std::floor(p.x));
            const int y = static_cast<int>(std::floor(p.y));
            if (x >= 0 && x < w && y >= 0 && y < h) kpt.at(x, y) = 1.0;
        }

    // the segmentation channel is the merged mask; left/right identity is
    // not preserved once the hands overlap
    const MaskGrid merged = mask_union(maps.silhouette_left, maps.silhouette_right);
    Grid<double> seg(w, h, 0.0);
    for (size_t i = 0; i < merged.data.size(); ++i) seg.data[i] = merged.data[i] ? 1.0 : 0.0;

    const DepthGrid depth = depth_min(maps.depth_left, maps.depth_right);
    double lo = 0.0, hi = 0.0;
    bool any = false;
    for (double d : depth.data) {
        if (!std::isfinite(d)) continue;
        if (!any) {
            lo = hi = d;
            any = true;
        } else {
            lo = std::min(lo, d);
            hi = std::max(hi, d);
        }
    }
    Grid<double> dn(w, h, 0.0);
    const double span = hi > lo ? hi - lo : 1.0;
    for (size_t i = 0; i < depth.data.size(); ++i)
        dn.data[i] = std::isfinite(depth.data[i]) ? 0.5 + 0.5 * (hi - depth.data[i]) / span : 0.0;

    return {kpt, seg, dn};
}

uint64_t prior_grids_content_hash(const PriorGrids& grids) {
    Fnv1a h;
    for (const auto& g : grids) {
        const int32_t dims[2] = {g.width, g.height};
        h.update(dims, sizeof(dims));
        h.update(g.data.data(), g.data.size() * sizeof(double));
    }
    return h.digest();
}

PriorTokenNet::PriorTokenNet(const PriorNetConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
    if (cfg.grid % cfg.patch != 0) throw ConfigError("prior net: grid must be divisible by patch");
    Rng rng(init_seed);
    const int64_t pd = cfg.patch * cfg.patch;
    const int64_t d = cfg.token_dim;
    const char* names[3] = {"kpt", "seg", "depth"};
    for (int m = 0; m < 3; ++m)
        patch_embed_[static_cast<size_t>(m)] =
            Affine::create(store_, std::string("embed.") + names[m], pd, d, rng);
    pos_embed_ = store_.add_gaussian("embed.pos", {cfg.tokens_per_modality(), d}, rng, 1.0);
    if (cfg.joint) {
        joint_encoder_ = TransformerEncoder::create(store_, "encoder", d, cfg.heads, cfg.layers, rng);
        for (int m = 0; m < 3; ++m) {
            head_[static_cast<size_t>(m)] = Affine::create(store_, std::string("head.") + names[m], d, d, rng);
            // zero-init heads: the untrained student predicts zero tokens
            for (double& v : head_[static_cast<size_t>(m)].w->value.data) v = 0.0;
        }
    } else {
        for (int m = 0; m < 3; ++m)
            branch_[static_cast<size_t>(m)] = TransformerEncoder::create(
                store_, std::string("encoder.") + names[m], d, cfg.heads, cfg.layers, rng);
    }
}

namespace {

Tensor patch_tokens(const Grid<double>& grid, int patch) {
    const int side = grid.width / patch;
    Tensor t = Tensor::zeros({static_cast<int64_t>(side) * side, static_cast<int64_t>(patch) * patch});
    int64_t row = 0;
    for (int py = 0; py < side; ++py)
        for (int px = 0; px < side; ++px, ++row) {
            int64_t at = 0;
            for (int y = 0; y < patch; ++y)
                for (int x = 0; x < patch; ++x, ++at)
                    t.data[static_cast<size_t>(row * t.cols() + at)] = grid.at(px * patch + x, py * patch + y);
        }
    return t;
}

}  // namespace

std::array<Graph::Id, 3> PriorTokenNet::build(Graph& g, const PriorGrids& grids) const {
    std::array<Graph::Id, 3> embedded{};
    for (int m = 0; m < 3; ++m) {
        const auto patches = g.leaf(patch_tokens(grids[static_cast<size_t>(m)], cfg_.patch));
        embedded[static_cast<size_t>(m)] =
            g.add(patch_embed_[static_cast<size_t>(m)].apply(g, patches), g.param(pos_embed_));
    }
    std::array<Graph::Id, 3> out{};
    if (cfg_.joint) {
        const int n = cfg_.tokens_per_modality();
        const auto all = g.concat_rows({embedded[0], embedded[1], embedded[2]});
        const auto enc = joint_encoder_.apply(g, all);
        for (int m = 0; m < 3; ++m)
            out[static_cast<size_t>(m)] =
                head_[static_cast<size_t>(m)].apply(g, g.slice_rows(enc, m * n, (m + 1) * n));
    } else {
        for (int m = 0; m < 3; ++m)
            out[static_cast<size_t>(m)] = branch_[static_cast<size_t>(m)].apply(g, embedded[static_cast<size_t>(m)]);
    }
    return out;
}

std::array<Tensor, 3> PriorTokenNet::forward(const PriorGrids& grids) const {
    Graph g;
    const auto ids = build(g, grids);
    return {g.value(ids[0]), g.value(ids[1]), g.value(ids[2])};
}

double PriorTokenNet::distill_batch(std::span<const PriorGrids> grids,
                                    std::span<const std::array<Tensor, 3>> teacher_tokens,
                                    Adam& adam) {
    if (grids.size() != teacher_tokens.size() || grids.empty())
        throw NumericalError("distill_batch: inconsistent batch arrays");
    const double inv_batch = 1.0 / static_cast<double>(grids.size());
    double mean_loss = 0.0;
    for (size_t s = 0; s < grids.size(); ++s) {
        Graph g;
        const auto pred = build(g, grids[s]);
        const auto pred_all = g.concat_rows({pred[0], pred[1], pred[2]});
        const auto teach_all = g.concat_rows({g.leaf(teacher_tokens[s][0]), g.leaf(teacher_tokens[s][1]),
                                              g.leaf(teacher_tokens[s][2])});
        const auto loss = g.mean_squared_error(pred_all, teach_all);
        const double lv = g.value(loss).data[0];
        if (!std::isfinite(lv)) throw NumericalError("distill_batch: non-finite loss");
        mean_loss += lv * inv_batch;
        g.backward(loss, inv_batch);
    }
    adam.step(store_);
    return mean_loss;
}

void PriorTokenNet::copy_weights_from(const PriorTokenNet& other) {
    for (Param* p : store_.all()) {
        const Param* src = other.store_.find(p->name);
        if (src == nullptr || src->value.shape != p->value.shape)
            throw NumericalError("copy_weights_from: architectures differ at '" + p->name + "'");
        p->value = src->value;
    }
}

void PriorTokenNet::save(const std::string& path) const { save_param_store(path, store_); }

void PriorTokenNet::load(const std::string& path) { (void)load_param_store(path, store_); }

}  // namespace handdiff
