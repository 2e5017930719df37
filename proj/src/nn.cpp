#include "handdiff/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "handdiff/error.hpp"

namespace handdiff {

Tensor Tensor::zeros(std::vector<int64_t> shape) {
    Tensor t;
    t.shape = std::move(shape);
    t.data.assign(static_cast<size_t>(t.numel()), 0.0);
    return t;
}

Tensor Tensor::full(std::vector<int64_t> shape, double value) {
    Tensor t = zeros(std::move(shape));
    for (double& v : t.data) v = value;
    return t;
}

Tensor Tensor::row(const std::vector<double>& values) {
    Tensor t;
    t.shape = {1, static_cast<int64_t>(values.size())};
    t.data = values;
    return t;
}

Param* ParamStore::add(const std::string& name, std::vector<int64_t> shape) {
    auto p = std::make_unique<Param>();
    p->name = name;
    p->value = Tensor::zeros(shape);
    p->grad = Tensor::zeros(std::move(shape));
    params_.push_back(std::move(p));
    return params_.back().get();
}

Param* ParamStore::add_gaussian(const std::string& name, std::vector<int64_t> shape, Rng& rng,
                                double stddev) {
    Param* p = add(name, std::move(shape));
    for (double& v : p->value.data) v = rng.gaussian() * stddev;
    return p;
}

Param* ParamStore::find(const std::string& name) {
    for (auto& p : params_)
        if (p->name == name) return p.get();
    return nullptr;
}

const Param* ParamStore::find(const std::string& name) const {
    for (auto& p : params_)
        if (p->name == name) return p.get();
    return nullptr;
}

void ParamStore::zero_grads() {
    for (auto& p : params_)
        for (double& g : p->grad.data) g = 0.0;
}

std::vector<Param*> ParamStore::all() {
    std::vector<Param*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
}

std::vector<const Param*> ParamStore::all() const {
    std::vector<const Param*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
}

// matmul kernels ------------------------------------------------------------

namespace {

// C += A[n,k] * B[k,m]
void matmul_nn_acc(const double* a, const double* b, double* c, int64_t n, int64_t k, int64_t m) {
    for (int64_t i = 0; i < n; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * m;
        for (int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * m;
            for (int64_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
}

// C += A[n,k] * B[m,k]^T
void matmul_nt_acc(const double* a, const double* b, double* c, int64_t n, int64_t k, int64_t m) {
    for (int64_t i = 0; i < n; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * m;
        for (int64_t j = 0; j < m; ++j) {
            const double* brow = b + j * k;
            double s = 0.0;
            for (int64_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            crow[j] += s;
        }
    }
}

// C += A[k,n]^T * B[k,m]
void matmul_tn_acc(const double* a, const double* b, double* c, int64_t n, int64_t k, int64_t m) {
    for (int64_t p = 0; p < k; ++p) {
        const double* arow = a + p * n;
        const double* brow = b + p * m;
        for (int64_t i = 0; i < n; ++i) {
            const double av = arow[i];
            double* crow = c + i * m;
            for (int64_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
}

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.70710678118654752440)); }

double gelu_grad_scalar(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * 0.70710678118654752440));
    const double pdf = std::exp(-0.5 * x * x) * 0.39894228040143267794;  // 1/sqrt(2 pi)
    return cdf + x * pdf;
}

constexpr double kLayerNormEps = 1e-5;

}  // namespace

// graph ----------------------------------------------------------------------

enum class Op : uint8_t {
    Leaf,
    ParamLeaf,
    MatMul,
    Add,
    Sub,
    AddRowVec,
    Mul,
    Scale,
    SymMean3,
    Transpose,
    SoftmaxRows,
    Gelu,
    LayerNormOp,
    ConcatRows,
    ConcatCols,
    SliceRows,
    SliceCols,
    SumSquares,
    Mse,
};

struct Graph::Node {
    Op op = Op::Leaf;
    std::vector<Id> inputs;
    Tensor value;
    Tensor grad;       // allocated lazily during backward
    bool grad_ready = false;
    Param* bound = nullptr;  // ParamLeaf only
    double scalar = 0.0;     // Scale factor
    int64_t a0 = 0, a1 = 0;  // slice bounds
};

Graph::Graph() = default;
Graph::~Graph() = default;
Graph::Graph(Graph&&) noexcept = default;
Graph& Graph::operator=(Graph&&) noexcept = default;

namespace {
void require(bool cond, const char* msg) {
    if (!cond) throw NumericalError(msg);
}
}  // namespace

Graph::Id Graph::leaf(Tensor value) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
}

Graph::Id Graph::param(Param* p) {
    Node n;
    n.op = Op::ParamLeaf;
    n.value = p->value;
    n.bound = p;
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
}

const Tensor& Graph::value(Id id) const { return nodes_.at(static_cast<size_t>(id)).value; }

const Tensor& Graph::grad(Id id) const { return nodes_.at(static_cast<size_t>(id)).grad; }

Tensor& Graph::grad_buffer(Id id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.grad_ready) {
        n.grad = Tensor::zeros(n.value.shape);
        n.grad_ready = true;
    }
    return n.grad;
}

Graph::Id Graph::matmul(Id a, Id b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require(ta.shape.size() == 2 && tb.shape.size() == 2 && ta.cols() == tb.rows(),
            "matmul: incompatible shapes");
    Node n;
    n.op = Op::MatMul;
    n.inputs = {a, b};
    n.value = Tensor::zeros({ta.rows(), tb.cols()});
    matmul_nn_acc(ta.data.data(), tb.data.data(), n.value.data.data(), ta.rows(), ta.cols(), tb.cols());
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
}

Graph::Id Graph::add(Id a, Id b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require(ta.same_shape(tb), "add: shape mismatch");
    Node n;
    n.op = Op::Add;
    n.inputs = {a, b};
    n.value = ta;
    for (size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] += tb.data[i];
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
}

Graph::Id Graph::sub(Id a, Id b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require(ta.same_shape(tb), "sub: shape mismatch");
    Node n;
    n.op = Op::Sub;
    n.inputs = {a, b};
    n.value = ta;
    for (size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] -= tb.data[i];
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
}

Graph::Id Graph::add_rowvec(Id x, Id bias) {
    const Tensor& tx = value(x);
    const Tensor& tb = value(bias);
    require(tx.shape.size() == 2 && tb.shape.size() == 2 && tb.rows() == 1 && tb.cols() == tx.cols(),
            "add_rowvec: bias must be [1, cols]");
    Node n;
    n.op = Op::AddRowVec;
    n.inputs = {x, bias};
    n.value = tx;
    const int64_t m = tx.cols();
    for (int64_t i = 0; i < tx.rows(); ++i)
        for (int64_t j = 0; j < m; ++j) n.value.data[static_cast<size_t>(i * m + j)] += tb.data[static_cast<size_t>(j)];
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
}

Graph::Id Graph::mul(Id a, Id b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require(ta.same_shape(tb), "mul: shape mismatch");
    Node n;
    n.op = Op::Mul;
    n.inputs = {a, b};
    n.value = ta;
    for (size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] *= tb.data[i];
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
}

Graph::Id Graph::symmetric_mean3(Id a, Id b, Id c) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    const Tensor& tc = value(c);
    require(ta.same_shape(tb) && ta.same_shape(tc), "symmetric_mean3: shape mismatch");
    Node n;
    n.op = Op::SymMean3;
    n.inputs = {a, b, c};
    n.value = ta;
    for (size_t i = 0; i < n.value.data.size(); ++i) {
        double x = ta.data[i], y = tb.data[i], z = tc.data[i];
        if (x > y) std::swap(x, y);
        if (y > z) std::swap(y, z);
        if (x > y) std::swap(x, y);
        n.value.data[i] = (x + y + z) / 3.0;
    }
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
}

Graph::Id Graph::scale(Id a, double s) {
    Node n;
    n.op = Op::Scale;
    n.inputs = {a};
    n.scalar = s;
    n.value = value(a);
    for (double& v : n.value.data) v *= s;
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
}

Graph::Id Graph::transpose(Id a) {
    const Tensor& ta = value(a);
    require(ta.shape.size() == 2, "transpose: 2-D only");
    Node n;
    n.op = Op::Transpose;
    n.inputs = {a};
    n.value = Tensor::zeros({ta.cols(), ta.rows()});
    for (int64_t i = 0; i < ta.rows(); ++i)
        for (int64_t j = 0; j < ta.cols(); ++j)
            n.value.data[static_cast<size_t>(j * ta.rows() + i)] = ta.data[static_cast<size_t>(i * ta.cols() + j)];
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
}

Graph::Id Graph::softmax_rows(Id a) {
    const Tensor& ta = value(a);
    require(ta.shape.size() == 2, "softmax_rows: 2-D only");
    Node n;
    n.op = Op::SoftmaxRows;
    n.inputs = {a};
    n.value = ta;
    const int64_t m = ta.cols();
    for (int64_t i = 0; i < ta.rows(); ++i) {
        double* row = n.value.data.data() + i * m;
        double mx = row[0];
        for (int64_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int64_t j = 0; j < m; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        const double inv = 1.0 / sum;
        for (int64_t j = 0; j < m; ++j) row[j] *= inv;
    }
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
}

Graph::Id Graph::gelu(Id a) {
    Node n;
    n.op = Op::Gelu;
    n.inputs = {a};
    n.value = value(a);
    for (double& v : n.value.data) v = gelu_scalar(v);
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
}

Graph::Id Graph::layer_norm(Id x, Id gamma, Id beta) {
    const Tensor& tx = value(x);
    const Tensor& tg = value(gamma);
    const Tensor& tb = value(beta);
    require(tx.shape.size() == 2, "layer_norm: 2-D only");
    require(tg.rows() == 1 && tg.cols() == tx.cols() && tb.rows() == 1 && tb.cols() == tx.cols(),
            "layer_norm: gamma/beta must be [1, cols]");
    Node n;
    n.op = Op::LayerNormOp;
    n.inputs = {x, gamma, beta};
    n.value = tx;
    const int64_t m = tx.cols();
    for (int64_t i = 0; i < tx.rows(); ++i) {
        double* row = n.value.data.data() + i * m;
        double mean = 0.0;
        for (int64_t j = 0; j < m; ++j) mean += row[j];
        mean /= static_cast<double>(m);
        double var = 0.0;
        for (int64_t j = 0; j < m; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(m);
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        for (int64_t j = 0; j < m; ++j)
            row[j] = ((row[j] - mean) * inv) * tg.data[static_cast<size_t>(j)] + tb.data[static_cast<size_t>(j)];
    }
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
}

Graph::Id Graph::concat_rows(const std::vector<Id>& parts) {
    require(!parts.empty(), "concat_rows: empty");
    const int64_t m = value(parts[0]).cols();
    int64_t rows = 0;
    for (Id p : parts) {
        require(value(p).shape.size() == 2 && value(p).cols() == m, "concat_rows: column mismatch");
        rows += value(p).rows();
    }
    Node n;
    n.op = Op::ConcatRows;
    n.inputs = parts;
    n.value = Tensor::zeros({rows, m});
    double* out = n.value.data.data();
    for (Id p : parts) {
        const Tensor& t = value(p);
        std::memcpy(out, t.data.data(), t.data.size() * sizeof(double));
        out += t.data.size();
    }
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
}

Graph::Id Graph::concat_cols(const std::vector<Id>& parts) {
    require(!parts.empty(), "concat_cols: empty");
    const int64_t rows = value(parts[0]).rows();
    int64_t cols = 0;
    for (Id p : parts) {
        require(value(p).shape.size() == 2 && value(p).rows() == rows, "concat_cols: row mismatch");
        cols += value(p).cols();
    }
    Node n;
    n.op = Op::ConcatCols;
    n.inputs = parts;
    n.value = Tensor::zeros({rows, cols});
    int64_t at = 0;
    for (Id p : parts) {
        const Tensor& t = value(p);
        for (int64_t i = 0; i < rows; ++i)
            std::memcpy(n.value.data.data() + i * cols + at, t.data.data() + i * t.cols(),
                        static_cast<size_t>(t.cols()) * sizeof(double));
        at += t.cols();
    }
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
}

Graph::Id Graph::slice_rows(Id a, int64_t r0, int64_t r1) {
    const Tensor& ta = value(a);
    require(ta.shape.size() == 2 && 0 <= r0 && r0 < r1 && r1 <= ta.rows(), "slice_rows: bad range");
    Node n;
    n.op = Op::SliceRows;
    n.inputs = {a};
    n.a0 = r0;
    n.a1 = r1;
    n.value = Tensor::zeros({r1 - r0, ta.cols()});
    std::memcpy(n.value.data.data(), ta.data.data() + r0 * ta.cols(), n.value.data.size() * sizeof(double));
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
}

Graph::Id Graph::slice_cols(Id a, int64_t c0, int64_t c1) {
    const Tensor& ta = value(a);
    require(ta.shape.size() == 2 && 0 <= c0 && c0 < c1 && c1 <= ta.cols(), "slice_cols: bad range");
    Node n;
    n.op = Op::SliceCols;
    n.inputs = {a};
    n.a0 = c0;
    n.a1 = c1;
    n.value = Tensor::zeros({ta.rows(), c1 - c0});
    for (int64_t i = 0; i < ta.rows(); ++i)
        std::memcpy(n.value.data.data() + i * (c1 - c0), ta.data.data() + i * ta.cols() + c0,
                    static_cast<size_t>(c1 - c0) * sizeof(double));
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
}

Graph::Id Graph::sum_squares(Id a) {
    Node n;
    n.op = Op::SumSquares;
    n.inputs = {a};
    double s = 0.0;
    for (double v : value(a).data) s += v * v;
    n.value = Tensor::full({1, 1}, s);
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
}

Graph::Id Graph::mean_squared_error(Id pred, Id target) {
    const Tensor& tp = value(pred);
    const Tensor& tt = value(target);
    require(tp.same_shape(tt), "mse: shape mismatch");
    Node n;
    n.op = Op::Mse;
    n.inputs = {pred, target};
    double s = 0.0;
    for (size_t i = 0; i < tp.data.size(); ++i) {
        const double d = tp.data[i] - tt.data[i];
        s += d * d;
    }
    n.value = Tensor::full({1, 1}, s / static_cast<double>(tp.numel()));
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
}

void Graph::backward(Id loss, double seed) {
    require(value(loss).numel() == 1, "backward: loss must be scalar");
    grad_buffer(loss).data[0] = seed;

    for (Id id = loss; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.grad_ready) continue;
        const Tensor& gy = n.grad;
        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::ParamLeaf:
                for (size_t i = 0; i < gy.data.size(); ++i) n.bound->grad.data[i] += gy.data[i];
                break;
            case Op::MatMul: {
                const Tensor& ta = value(n.inputs[0]);
                const Tensor& tb = value(n.inputs[1]);
                Tensor& ga = grad_buffer(n.inputs[0]);
                Tensor& gb = grad_buffer(n.inputs[1]);
                matmul_nt_acc(gy.data.data(), tb.data.data(), ga.data.data(), ta.rows(), tb.cols(), ta.cols());
                matmul_tn_acc(ta.data.data(), gy.data.data(), gb.data.data(), ta.cols(), ta.rows(), tb.cols());
                break;
            }
            case Op::Add: {
                Tensor& ga = grad_buffer(n.inputs[0]);
                Tensor& gb = grad_buffer(n.inputs[1]);
                for (size_t i = 0; i < gy.data.size(); ++i) {
                    ga.data[i] += gy.data[i];
                    gb.data[i] += gy.data[i];
                }
                break;
            }
            case Op::Sub: {
                Tensor& ga = grad_buffer(n.inputs[0]);
                Tensor& gb = grad_buffer(n.inputs[1]);
                for (size_t i = 0; i < gy.data.size(); ++i) {
                    ga.data[i] += gy.data[i];
                    gb.data[i] -= gy.data[i];
                }
                break;
            }
            case Op::AddRowVec: {
                Tensor& gx = grad_buffer(n.inputs[0]);
                Tensor& gb = grad_buffer(n.inputs[1]);
                const int64_t m = n.value.cols();
                for (int64_t i = 0; i < n.value.rows(); ++i)
                    for (int64_t j = 0; j < m; ++j) {
                        gx.data[static_cast<size_t>(i * m + j)] += gy.data[static_cast<size_t>(i * m + j)];
                        gb.data[static_cast<size_t>(j)] += gy.data[static_cast<size_t>(i * m + j)];
                    }
                break;
            }
            case Op::Mul: {
                const Tensor& ta = value(n.inputs[0]);
                const Tensor& tb = value(n.inputs[1]);
                Tensor& ga = grad_buffer(n.inputs[0]);
                Tensor& gb = grad_buffer(n.inputs[1]);
                for (size_t i = 0; i < gy.data.size(); ++i) {
                    ga.data[i] += gy.data[i] * tb.data[i];
                    gb.data[i] += gy.data[i] * ta.data[i];
                }
                break;
            }
            case Op::Scale: {
                Tensor& ga = grad_buffer(n.inputs[0]);
                for (size_t i = 0; i < gy.data.size(); ++i) ga.data[i] += gy.data[i] * n.scalar;
                break;
            }
            case Op::SymMean3: {
                for (Id p : n.inputs) {
                    Tensor& gp = grad_buffer(p);
                    for (size_t i = 0; i < gy.data.size(); ++i) gp.data[i] += gy.data[i] / 3.0;
                }
                break;
            }
            case Op::Transpose: {
                Tensor& ga = grad_buffer(n.inputs[0]);
                const int64_t r = n.value.rows(), c = n.value.cols();  // transposed dims
                for (int64_t i = 0; i < r; ++i)
                    for (int64_t j = 0; j < c; ++j)
                        ga.data[static_cast<size_t>(j * r + i)] += gy.data[static_cast<size_t>(i * c + j)];
                break;
            }
            case Op::SoftmaxRows: {
                Tensor& ga = grad_buffer(n.inputs[0]);
                const int64_t m = n.value.cols();
                for (int64_t i = 0; i < n.value.rows(); ++i) {
                    const double* y = n.value.data.data() + i * m;
                    const double* dy = gy.data.data() + i * m;
                    double dotp = 0.0;
                    for (int64_t j = 0; j < m; ++j) dotp += dy[j] * y[j];
                    double* gx = ga.data.data() + i * m;
                    for (int64_t j = 0; j < m; ++j) gx[j] += y[j] * (dy[j] - dotp);
                }
                break;
            }
            case Op::Gelu: {
                const Tensor& tx = value(n.inputs[0]);
                Tensor& ga = grad_buffer(n.inputs[0]);
                for (size_t i = 0; i < gy.data.size(); ++i)
                    ga.data[i] += gy.data[i] * gelu_grad_scalar(tx.data[i]);
                break;
            }
            case Op::LayerNormOp: {
                const Tensor& tx = value(n.inputs[0]);
                const Tensor& tg = value(n.inputs[1]);
                Tensor& gx = grad_buffer(n.inputs[0]);
                Tensor& gg = grad_buffer(n.inputs[1]);
                Tensor& gb = grad_buffer(n.inputs[2]);
                const int64_t m = tx.cols();
                const double dm = static_cast<double>(m);
                for (int64_t i = 0; i < tx.rows(); ++i) {
                    const double* x = tx.data.data() + i * m;
                    const double* dy = gy.data.data() + i * m;
                    double mean = 0.0;
                    for (int64_t j = 0; j < m; ++j) mean += x[j];
                    mean /= dm;
                    double var = 0.0;
                    for (int64_t j = 0; j < m; ++j) var += (x[j] - mean) * (x[j] - mean);
                    var /= dm;
                    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
                    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                    for (int64_t j = 0; j < m; ++j) {
                        const double xhat = (x[j] - mean) * inv;
                        const double dxhat = dy[j] * tg.data[static_cast<size_t>(j)];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                        gg.data[static_cast<size_t>(j)] += dy[j] * xhat;
                        gb.data[static_cast<size_t>(j)] += dy[j];
                    }
                    double* gxr = gx.data.data() + i * m;
                    for (int64_t j = 0; j < m; ++j) {
                        const double xhat = (x[j] - mean) * inv;
                        const double dxhat = dy[j] * tg.data[static_cast<size_t>(j)];
                        gxr[j] += inv * (dxhat - sum_dxhat / dm - xhat * sum_dxhat_xhat / dm);
                    }
                }
                break;
            }
            case Op::ConcatRows: {
                const double* src = gy.data.data();
                for (Id p : n.inputs) {
                    Tensor& gp = grad_buffer(p);
                    for (size_t i = 0; i < gp.data.size(); ++i) gp.data[i] += src[i];
                    src += gp.data.size();
                }
                break;
            }
            case Op::ConcatCols: {
                const int64_t rows = n.value.rows(), cols = n.value.cols();
                int64_t at = 0;
                for (Id p : n.inputs) {
                    Tensor& gp = grad_buffer(p);
                    const int64_t pc = gp.cols();
                    for (int64_t i = 0; i < rows; ++i)
                        for (int64_t j = 0; j < pc; ++j)
                            gp.data[static_cast<size_t>(i * pc + j)] += gy.data[static_cast<size_t>(i * cols + at + j)];
                    at += pc;
                }
                break;
            }
            case Op::SliceRows: {
                Tensor& ga = grad_buffer(n.inputs[0]);
                const int64_t m = ga.cols();
                for (size_t i = 0; i < gy.data.size(); ++i)
                    ga.data[static_cast<size_t>(n.a0 * m) + i] += gy.data[i];
                break;
            }
            case Op::SliceCols: {
                Tensor& ga = grad_buffer(n.inputs[0]);
                const int64_t src_cols = ga.cols();
                const int64_t w = n.a1 - n.a0;
                for (int64_t i = 0; i < n.value.rows(); ++i)
                    for (int64_t j = 0; j < w; ++j)
                        ga.data[static_cast<size_t>(i * src_cols + n.a0 + j)] += gy.data[static_cast<size_t>(i * w + j)];
                break;
            }
            case Op::SumSquares: {
                const Tensor& ta = value(n.inputs[0]);
                Tensor& ga = grad_buffer(n.inputs[0]);
                const double s = gy.data[0];
                for (size_t i = 0; i < ta.data.size(); ++i) ga.data[i] += 2.0 * ta.data[i] * s;
                break;
            }
            case Op::Mse: {
                const Tensor& tp = value(n.inputs[0]);
                const Tensor& tt = value(n.inputs[1]);
                Tensor& gp = grad_buffer(n.inputs[0]);
                Tensor& gt = grad_buffer(n.inputs[1]);
                const double s = 2.0 * gy.data[0] / static_cast<double>(tp.numel());
                for (size_t i = 0; i < tp.data.size(); ++i) {
                    const double d = (tp.data[i] - tt.data[i]) * s;
                    gp.data[i] += d;
                    gt.data[i] -= d;
                }
                break;
            }
        }
    }
}

Graph::Id self_attention(Graph& g, Graph::Id x, int heads, Graph::Id wqkv, Graph::Id bqkv,
                         Graph::Id wo, Graph::Id bo) {
    const int64_t d = g.value(x).cols();
    if (d % heads != 0) throw NumericalError("self_attention: d_model not divisible by heads");
    const int64_t dh = d / heads;
    const Graph::Id qkv = g.add_rowvec(g.matmul(x, wqkv), bqkv);
    std::vector<Graph::Id> head_outputs;
    head_outputs.reserve(static_cast<size_t>(heads));
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int h = 0; h < heads; ++h) {
        const Graph::Id q = g.slice_cols(qkv, h * dh, (h + 1) * dh);
        const Graph::Id k = g.slice_cols(qkv, d + h * dh, d + (h + 1) * dh);
        const Graph::Id v = g.slice_cols(qkv, 2 * d + h * dh, 2 * d + (h + 1) * dh);
        const Graph::Id att = g.softmax_rows(g.scale(g.matmul(q, g.transpose(k)), inv_sqrt));
        head_outputs.push_back(g.matmul(att, v));
    }
    return g.add_rowvec(g.matmul(g.concat_cols(head_outputs), wo), bo);
}

void Adam::step(ParamStore& store) {
    auto params = store.all();
    if (m_.empty()) {
        for (Param* p : params) {
            m_.push_back(Tensor::zeros(p->value.shape));
            v_.push_back(Tensor::zeros(p->value.shape));
        }
    }
    if (m_.size() != params.size()) throw NumericalError("adam: parameter set changed");
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Param* p = params[pi];
        double* m = m_[pi].data.data();
        double* v = v_[pi].data.data();
        for (size_t i = 0; i < p->value.data.size(); ++i) {
            const double gr = p->grad.data[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gr;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gr * gr;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            double upd = mhat / (std::sqrt(vhat) + cfg_.eps);
            if (cfg_.weight_decay != 0.0) upd += cfg_.weight_decay * p->value.data[i];
            p->value.data[i] -= cfg_.lr * upd;
        }
    }
    store.zero_grads();
}

// layers ---------------------------------------------------------------------

Affine Affine::create(ParamStore& store, const std::string& prefix, int64_t in, int64_t out, Rng& rng) {
    Affine a;
    a.w = store.add_gaussian(prefix + ".w", {in, out}, rng, std::sqrt(2.0 / static_cast<double>(in + out)));
    a.b = store.add(prefix + ".b", {1, out});
    return a;
}

Graph::Id Affine::apply(Graph& g, Graph::Id x) const {
    return g.add_rowvec(g.matmul(x, g.param(w)), g.param(b));
}

LayerNorm LayerNorm::create(ParamStore& store, const std::string& prefix, int64_t d) {
    LayerNorm ln;
    ln.gamma = store.add(prefix + ".gamma", {1, d});
    for (double& v : ln.gamma->value.data) v = 1.0;
    ln.beta = store.add(prefix + ".beta", {1, d});
    return ln;
}

Graph::Id LayerNorm::apply(Graph& g, Graph::Id x) const {
    return g.layer_norm(x, g.param(gamma), g.param(beta));
}

SelfAttention SelfAttention::create(ParamStore& store, const std::string& prefix, int64_t d,
                                    int heads, Rng& rng) {
    SelfAttention sa;
    sa.heads = heads;
    sa.wqkv = store.add_gaussian(prefix + ".wqkv", {d, 3 * d}, rng, std::sqrt(2.0 / static_cast<double>(4 * d)));
    sa.bqkv = store.add(prefix + ".bqkv", {1, 3 * d});
    sa.wo = store.add_gaussian(prefix + ".wo", {d, d}, rng, std::sqrt(1.0 / static_cast<double>(d)));
    sa.bo = store.add(prefix + ".bo", {1, d});
    return sa;
}

Graph::Id SelfAttention::apply(Graph& g, Graph::Id x) const {
    return self_attention(g, x, heads, g.param(wqkv), g.param(bqkv), g.param(wo), g.param(bo));
}

EncoderLayer EncoderLayer::create(ParamStore& store, const std::string& prefix, int64_t d,
                                  int heads, Rng& rng) {
    EncoderLayer e;
    e.ln1 = LayerNorm::create(store, prefix + ".ln1", d);
    e.attn = SelfAttention::create(store, prefix + ".attn", d, heads, rng);
    e.ln2 = LayerNorm::create(store, prefix + ".ln2", d);
    e.ff1 = Affine::create(store, prefix + ".ff1", d, 4 * d, rng);
    e.ff2 = Affine::create(store, prefix + ".ff2", 4 * d, d, rng);
    return e;
}

Graph::Id EncoderLayer::apply(Graph& g, Graph::Id x) const {
    x = g.add(x, attn.apply(g, ln1.apply(g, x)));
    x = g.add(x, ff2.apply(g, g.gelu(ff1.apply(g, ln2.apply(g, x)))));
    return x;
}

TransformerEncoder TransformerEncoder::create(ParamStore& store, const std::string& prefix,
                                              int64_t d, int heads, int n_layers, Rng& rng) {
    TransformerEncoder enc;
    for (int i = 0; i < n_layers; ++i)
        enc.layers.push_back(EncoderLayer::create(store, prefix + ".layer" + std::to_string(i), d, heads, rng));
    return enc;
}

Graph::Id TransformerEncoder::apply(Graph& g, Graph::Id x) const {
    for (const EncoderLayer& l : layers) x = l.apply(g, x);
    return x;
}

// weights file ----------------------------------------------------------------

namespace {

constexpr char kWeightsMagic[8] = {'H', 'D', 'N', 'N', 'W', '0', '0', '1'};

void put_bytes(std::string& buf, const void* p, size_t n) {
    buf.append(static_cast<const char*>(p), n);
}

template <typename T>
void put_pod(std::string& buf, T v) {
    put_bytes(buf, &v, sizeof(T));
}

}  // namespace

void save_weights(const std::string& path,
                  const std::vector<std::pair<std::string, const Tensor*>>& entries) {
    std::string buf;
    put_bytes(buf, kWeightsMagic, sizeof(kWeightsMagic));
    put_pod<uint32_t>(buf, static_cast<uint32_t>(entries.size()));
    for (const auto& [name, tensor] : entries) {
        put_pod<uint32_t>(buf, static_cast<uint32_t>(name.size()));
        put_bytes(buf, name.data(), name.size());
        put_pod<uint32_t>(buf, static_cast<uint32_t>(tensor->shape.size()));
        for (int64_t d : tensor->shape) put_pod<int64_t>(buf, d);
        put_bytes(buf, tensor->data.data(), tensor->data.size() * sizeof(double));
    }
    Fnv1a h;
    h.update(buf.data(), buf.size());
    put_pod<uint64_t>(buf, h.digest());

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open weights file for writing: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("short write to weights file: " + path);
}

std::vector<std::pair<std::string, Tensor>> load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open weights file: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < sizeof(kWeightsMagic) + sizeof(uint32_t) + sizeof(uint64_t))
        throw IoError("weights file truncated: " + path);
    if (std::memcmp(buf.data(), kWeightsMagic, sizeof(kWeightsMagic)) != 0)
        throw IoError("weights file magic/version mismatch: " + path);

    const size_t payload = buf.size() - sizeof(uint64_t);
    uint64_t stored = 0;
    std::memcpy(&stored, buf.data() + payload, sizeof(uint64_t));
    Fnv1a h;
    h.update(buf.data(), payload);
    if (h.digest() != stored) throw IoError("weights file checksum failure: " + path);

    size_t at = sizeof(kWeightsMagic);
    auto take = [&](void* dst, size_t n) {
        if (at + n > payload) throw IoError("weights file truncated: " + path);
        std::memcpy(dst, buf.data() + at, n);
        at += n;
    };
    uint32_t count = 0;
    take(&count, sizeof(count));
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(count);
    for (uint32_t e = 0; e < count; ++e) {
        uint32_t name_len = 0;
        take(&name_len, sizeof(name_len));
        std::string name(name_len, '\0');
        take(name.data(), name_len);
        uint32_t ndim = 0;
        take(&ndim, sizeof(ndim));
        std::vector<int64_t> shape(ndim);
        for (auto& d : shape) take(&d, sizeof(int64_t));
        Tensor t = Tensor::zeros(shape);
        take(t.data.data(), t.data.size() * sizeof(double));
        out.emplace_back(std::move(name), std::move(t));
    }
    return out;
}

void save_param_store(const std::string& path, const ParamStore& store,
                      const std::vector<std::pair<std::string, const Tensor*>>& extra) {
    std::vector<std::pair<std::string, const Tensor*>> entries;
    for (const Param* p : store.all()) entries.emplace_back(p->name, &p->value);
    for (const auto& e : extra) entries.push_back(e);
    save_weights(path, entries);
}

std::vector<std::pair<std::string, Tensor>> load_param_store(const std::string& path,
                                                             ParamStore& store) {
    std::vector<std::pair<std::string, Tensor>> extra;
    for (auto& [name, tensor] : load_weights(path)) {
        Param* p = store.find(name);
        if (p == nullptr) {
            extra.emplace_back(name, std::move(tensor));
            continue;
        }
        if (p->value.shape != tensor.shape)
            throw IoError("weights entry '" + name + "' has mismatched shape in " + path);
        p->value = std::move(tensor);
    }
    return extra;
}

}  // namespace handdiff
