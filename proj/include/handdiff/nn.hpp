#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "handdiff/rng.hpp"

namespace handdiff {

// Minimal dense-tensor reverse-mode autodiff: the layers needed by the
// denoiser and the fusion encoders, plus Adam. 64-bit floats and fixed
// summation order everywhere; two runs with the same seed produce
// byte-identical parameters.

struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    static Tensor zeros(std::vector<int64_t> shape);
    static Tensor full(std::vector<int64_t> shape, double value);
    static Tensor row(const std::vector<double>& values);  // [1, n]

    int64_t numel() const {
        int64_t n = 1;
        for (int64_t e : shape) n *= e;
        return n;
    }
    int64_t rows() const { return shape.at(0); }
    int64_t cols() const { return shape.at(1); }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
};

// ordered parameter collection; order defines the Adam update sequence
class ParamStore {
  public:
    Param* add(const std::string& name, std::vector<int64_t> shape);
    Param* add_gaussian(const std::string& name, std::vector<int64_t> shape, Rng& rng, double stddev);
    Param* find(const std::string& name);
    const Param* find(const std::string& name) const;
    void zero_grads();

    std::vector<Param*> all();
    std::vector<const Param*> all() const;
    size_t size() const { return params_.size(); }

  private:
    std::vector<std::unique_ptr<Param>> params_;
};

class Graph {
  public:
    using Id = int32_t;

    Id leaf(Tensor value);            // constant
    Id param(Param* p);               // trainable leaf; backward accumulates into p->grad

    Id matmul(Id a, Id b);
    Id add(Id a, Id b);               // same shape
    Id sub(Id a, Id b);
    Id add_rowvec(Id x, Id bias);     // [n,m] + [1,m]
    Id mul(Id a, Id b);               // elementwise
    Id scale(Id a, double s);
    // elementwise (a+b+c)/3 with value-sorted summation: bit-identical under
    // any permutation of the arguments
    Id symmetric_mean3(Id a, Id b, Id c);
    Id transpose(Id a);
    Id softmax_rows(Id a);
    Id gelu(Id a);
    Id layer_norm(Id x, Id gamma, Id beta);  // normalizes the last dimension
    Id concat_rows(const std::vector<Id>& parts);
    Id concat_cols(const std::vector<Id>& parts);
    Id slice_rows(Id a, int64_t r0, int64_t r1);
    Id slice_cols(Id a, int64_t c0, int64_t c1);
    Id sum_squares(Id a);             // scalar [1,1]
    Id mean_squared_error(Id pred, Id target);  // scalar [1,1], mean over elements

    const Tensor& value(Id id) const;
    // reverse pass from a scalar; seed scales the whole gradient (1/batch for
    // fixed-order gradient accumulation)
    void backward(Id loss, double seed = 1.0);
    const Tensor& grad(Id id) const;

  private:
    struct Node;
    std::vector<Node> nodes_;
    Tensor& grad_buffer(Id id);

  public:
    ~Graph();
    Graph();
    Graph(Graph&&) noexcept;
    Graph& operator=(Graph&&) noexcept;
};

// scaled dot-product multi-head self-attention built from graph primitives
Graph::Id self_attention(Graph& g, Graph::Id x, int heads, Graph::Id wqkv, Graph::Id bqkv,
                         Graph::Id wo, Graph::Id bo);

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // 0 = plain Adam
};

class Adam {
  public:
    explicit Adam(const AdamConfig& cfg) : cfg_(cfg) {}

    // bias-corrected update from the accumulated grads, then zeroes them
    void step(ParamStore& store);
    int64_t step_count() const { return step_count_; }
    const AdamConfig& config() const { return cfg_; }

  private:
    AdamConfig cfg_;
    int64_t step_count_ = 0;
    std::vector<Tensor> m_, v_;
};

// layers ------------------------------------------------------------------

struct Affine {
    Param* w = nullptr;
    Param* b = nullptr;
    static Affine create(ParamStore& store, const std::string& prefix, int64_t in, int64_t out,
                         Rng& rng);
    Graph::Id apply(Graph& g, Graph::Id x) const;
};

struct LayerNorm {
    Param* gamma = nullptr;
    Param* beta = nullptr;
    static LayerNorm create(ParamStore& store, const std::string& prefix, int64_t d);
    Graph::Id apply(Graph& g, Graph::Id x) const;
};

struct SelfAttention {
    int heads = 1;
    Param* wqkv = nullptr;
    Param* bqkv = nullptr;
    Param* wo = nullptr;
    Param* bo = nullptr;
    static SelfAttention create(ParamStore& store, const std::string& prefix, int64_t d, int heads,
                                Rng& rng);
    Graph::Id apply(Graph& g, Graph::Id x) const;
};

// pre-norm transformer block: x + attn(ln(x)), then x + mlp(ln(x))
struct EncoderLayer {
    LayerNorm ln1, ln2;
    SelfAttention attn;
    Affine ff1, ff2;
    static EncoderLayer create(ParamStore& store, const std::string& prefix, int64_t d, int heads,
                               Rng& rng);
    Graph::Id apply(Graph& g, Graph::Id x) const;
};

struct TransformerEncoder {
    std::vector<EncoderLayer> layers;
    static TransformerEncoder create(ParamStore& store, const std::string& prefix, int64_t d,
                                     int heads, int n_layers, Rng& rng);
    Graph::Id apply(Graph& g, Graph::Id x) const;
};

// weights file: magic, version, named tensor table, FNV-1a trailer ---------

void save_weights(const std::string& path, const std::vector<std::pair<std::string, const Tensor*>>& entries);
std::vector<std::pair<std::string, Tensor>> load_weights(const std::string& path);

void save_param_store(const std::string& path, const ParamStore& store,
                      const std::vector<std::pair<std::string, const Tensor*>>& extra = {});
// loads matching names into the store; extra entries are returned
std::vector<std::pair<std::string, Tensor>> load_param_store(const std::string& path, ParamStore& store);

}  // namespace handdiff
