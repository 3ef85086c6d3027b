#include "laneatt/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>

namespace laneatt {

namespace {

std::atomic<std::uint64_t> g_mac_count{0};
std::atomic<std::uint64_t> g_next_tape_id{1};

void check(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

}  // namespace

int shape_numel(const Shape& shape) {
    int n = 1;
    for (int e : shape) {
        if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
        n *= e;
    }
    return n;
}

Tensor::Tensor(Shape s) : shape(std::move(s)) {
    data.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0);
}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    if (static_cast<int>(data.size()) != shape_numel(shape)) {
        throw ShapeError("value count " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    }
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::zeros(Shape s) { return Tensor(std::move(s)); }

Tensor Tensor::full(Shape s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
}

int Tensor::extent(int axis) const {
    if (axis < 0 || axis >= rank()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank()));
    }
    return shape[static_cast<std::size_t>(axis)];
}

double Tensor::value() const {
    if (size() != 1) throw ShapeError("value() on tensor of size " + std::to_string(size()));
    return data[0];
}

double& Tensor::at2(int r, int c) {
    check(rank() == 2, "at2 on rank-" + std::to_string(rank()) + " tensor");
    check(r >= 0 && r < shape[0] && c >= 0 && c < shape[1], "at2 index out of range");
    return data[static_cast<std::size_t>(r) * shape[1] + c];
}

double Tensor::at2(int r, int c) const { return const_cast<Tensor*>(this)->at2(r, c); }

double& Tensor::at3(int c, int y, int x) {
    check(rank() == 3, "at3 on rank-" + std::to_string(rank()) + " tensor");
    check(c >= 0 && c < shape[0] && y >= 0 && y < shape[1] && x >= 0 && x < shape[2],
          "at3 index out of range");
    return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
}

double Tensor::at3(int c, int y, int x) const { return const_cast<Tensor*>(this)->at3(c, y, x); }

// --- Tape -----------------------------------------------------------------

Tape::Tape() : id_(g_next_tape_id.fetch_add(1)) {}

int Tape::watch(Tensor& t) {
    int node = record(t.size(), [](std::span<const double>, Tape&) {});
    t.node = node;
    t.tape_id = id_;
    return node;
}

int Tape::record(int out_numel, BackwardFn fn) {
    if (ran_backward_) throw TapeError("cannot record after backward()");
    nodes_.push_back(Node{std::move(fn), out_numel});
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::node_of(const Tensor& t) const {
    if (t.node == Tensor::kNoNode || t.tape_id != id_) return Tensor::kNoNode;
    if (t.node < 0 || t.node >= static_cast<int>(nodes_.size())) {
        throw TapeError("tensor carries node " + std::to_string(t.node) +
                        " beyond tape size " + std::to_string(nodes_.size()));
    }
    return t.node;
}

void Tape::accumulate(int node, std::span<const double> g) {
    if (node == Tensor::kNoNode) return;
    auto& dst = grads_[static_cast<std::size_t>(node)];
    if (dst.size() != g.size()) {
        throw TapeError("gradient size mismatch on node " + std::to_string(node));
    }
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

void Tape::accumulate_at(int node, int index, double g) {
    if (node == Tensor::kNoNode) return;
    auto& dst = grads_[static_cast<std::size_t>(node)];
    if (index < 0 || index >= static_cast<int>(dst.size())) {
        throw TapeError("gradient index out of range on node " + std::to_string(node));
    }
    dst[static_cast<std::size_t>(index)] += g;
}

void Tape::backward(const Tensor& scalar_output) {
    if (ran_backward_) throw TapeError("backward() already ran on this tape");
    int out_node = node_of(scalar_output);
    if (out_node == Tensor::kNoNode) throw TapeError("backward() output is not on this tape");
    if (nodes_[static_cast<std::size_t>(out_node)].numel != 1) {
        throw TapeError("backward() requires a scalar output");
    }
    ran_backward_ = true;
    grads_.resize(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        grads_[i].assign(static_cast<std::size_t>(nodes_[i].numel), 0.0);
    }
    grads_[static_cast<std::size_t>(out_node)][0] = 1.0;
    for (int i = out_node; i >= 0; --i) {
        nodes_[static_cast<std::size_t>(i)].backward(grads_[static_cast<std::size_t>(i)], *this);
    }
}

const std::vector<double>& Tape::grad(const Tensor& t) const {
    if (!ran_backward_) throw TapeError("grad() before backward()");
    int node = node_of(t);
    if (node == Tensor::kNoNode) throw TapeError("grad() of a tensor not on this tape");
    return grads_[static_cast<std::size_t>(node)];
}

// --- MAC accounting -------------------------------------------------------

std::uint64_t mac_total() { return g_mac_count.load(); }
void reset_mac_counter() { g_mac_count.store(0); }
void add_macs(std::uint64_t n) { g_mac_count.fetch_add(n); }

// --- op helpers -----------------------------------------------------------

namespace {

int node_on(Tape* tape, const Tensor& t) {
    return tape ? tape->node_of(t) : Tensor::kNoNode;
}

/// Attaches a backward closure to `out` if any input participates.
void finish(Tape* tape, Tensor& out, bool any_input_on_tape, Tape::BackwardFn fn) {
    if (!tape || !any_input_on_tape) return;
    out.node = tape->record(out.size(), std::move(fn));
    out.tape_id = tape->id();
}

}  // namespace

// --- ops ------------------------------------------------------------------

Tensor conv2d(Tape* tape, const Tensor& input, const Tensor& kernel, int stride, int padding) {
    check(input.rank() == 3, "conv2d input must be [C,H,W], got " + shape_str(input.shape));
    check(kernel.rank() == 4, "conv2d kernel must be [Cout,Cin,kh,kw], got " + shape_str(kernel.shape));
    check(kernel.shape[1] == input.shape[0],
          "conv2d channel mismatch: input " + shape_str(input.shape) + " kernel " +
              shape_str(kernel.shape));
    check(stride >= 1, "conv2d stride must be >= 1");
    check(padding >= 0, "conv2d padding must be >= 0");
    const int cin = input.shape[0], h = input.shape[1], w = input.shape[2];
    const int cout = kernel.shape[0], kh = kernel.shape[2], kw = kernel.shape[3];
    const int ho = (h + 2 * padding - kh) / stride + 1;
    const int wo = (w + 2 * padding - kw) / stride + 1;
    check(h + 2 * padding >= kh && w + 2 * padding >= kw,
          "conv2d kernel larger than padded input");

    Tensor out({cout, ho, wo});
    const double* in = input.data.data();
    const double* kn = kernel.data.data();
    double* ot = out.data.data();
    for (int oc = 0; oc < cout; ++oc) {
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                double acc = 0.0;
                for (int ic = 0; ic < cin; ++ic) {
                    for (int ky = 0; ky < kh; ++ky) {
                        const int iy = oy * stride - padding + ky;
                        if (iy < 0 || iy >= h) continue;
                        const double* in_row = in + (static_cast<std::size_t>(ic) * h + iy) * w;
                        const double* kn_row =
                            kn + ((static_cast<std::size_t>(oc) * cin + ic) * kh + ky) * kw;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ix = ox * stride - padding + kx;
                            if (ix < 0 || ix >= w) continue;
                            acc += in_row[ix] * kn_row[kx];
                        }
                    }
                }
                ot[(static_cast<std::size_t>(oc) * ho + oy) * wo + ox] = acc;
            }
        }
    }
    add_macs(static_cast<std::uint64_t>(cout) * cin * kh * kw * static_cast<std::uint64_t>(ho) * wo);

    const int in_node = node_on(tape, input);
    const int k_node = node_on(tape, kernel);
    finish(tape, out, in_node != Tensor::kNoNode || k_node != Tensor::kNoNode,
           [in_node, k_node, x = input.data, k = kernel.data, cin, h, w, cout, kh, kw, ho, wo,
            stride, padding](std::span<const double> g, Tape& t) {
               std::vector<double> gx(x.size(), 0.0), gk(k.size(), 0.0);
               for (int oc = 0; oc < cout; ++oc) {
                   for (int oy = 0; oy < ho; ++oy) {
                       for (int ox = 0; ox < wo; ++ox) {
                           const double go = g[(static_cast<std::size_t>(oc) * ho + oy) * wo + ox];
                           if (go == 0.0) continue;
                           for (int ic = 0; ic < cin; ++ic) {
                               for (int ky = 0; ky < kh; ++ky) {
                                   const int iy = oy * stride - padding + ky;
                                   if (iy < 0 || iy >= h) continue;
                                   for (int kx = 0; kx < kw; ++kx) {
                                       const int ix = ox * stride - padding + kx;
                                       if (ix < 0 || ix >= w) continue;
                                       const std::size_t xi = (static_cast<std::size_t>(ic) * h + iy) * w + ix;
                                       const std::size_t ki = ((static_cast<std::size_t>(oc) * cin + ic) * kh + ky) * kw + kx;
                                       gx[xi] += go * k[ki];
                                       gk[ki] += go * x[xi];
                                   }
                               }
                           }
                       }
                   }
               }
               t.accumulate(in_node, gx);
               t.accumulate(k_node, gk);
           });
    return out;
}

Tensor dense(Tape* tape, const Tensor& input, const Tensor& weight, const Tensor& bias) {
    check(input.rank() == 1, "dense input must be rank 1, got " + shape_str(input.shape));
    check(weight.rank() == 2, "dense weight must be [m,n], got " + shape_str(weight.shape));
    check(bias.rank() == 1, "dense bias must be rank 1, got " + shape_str(bias.shape));
    const int n = input.shape[0], m = weight.shape[0];
    check(weight.shape[1] == n, "dense weight " + shape_str(weight.shape) + " vs input " +
                                    shape_str(input.shape));
    check(bias.shape[0] == m, "dense bias " + shape_str(bias.shape) + " vs weight " +
                                  shape_str(weight.shape));

    Tensor out({m});
    for (int i = 0; i < m; ++i) {
        double acc = bias.data[static_cast<std::size_t>(i)];
        for (int j = 0; j < n; ++j) {
            acc += weight.data[static_cast<std::size_t>(i) * n + j] * input.data[static_cast<std::size_t>(j)];
        }
        out.data[static_cast<std::size_t>(i)] = acc;
    }
    add_macs(static_cast<std::uint64_t>(m) * n);

    const int x_node = node_on(tape, input);
    const int w_node = node_on(tape, weight);
    const int b_node = node_on(tape, bias);
    finish(tape, out,
           x_node != Tensor::kNoNode || w_node != Tensor::kNoNode || b_node != Tensor::kNoNode,
           [x_node, w_node, b_node, x = input.data, wt = weight.data, m, n](
               std::span<const double> g, Tape& t) {
               if (x_node != Tensor::kNoNode) {
                   std::vector<double> gx(static_cast<std::size_t>(n), 0.0);
                   for (int i = 0; i < m; ++i)
                       for (int j = 0; j < n; ++j)
                           gx[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i)] * wt[static_cast<std::size_t>(i) * n + j];
                   t.accumulate(x_node, gx);
               }
               if (w_node != Tensor::kNoNode) {
                   std::vector<double> gw(static_cast<std::size_t>(m) * n, 0.0);
                   for (int i = 0; i < m; ++i)
                       for (int j = 0; j < n; ++j)
                           gw[static_cast<std::size_t>(i) * n + j] = g[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(j)];
                   t.accumulate(w_node, gw);
               }
               t.accumulate(b_node, g);
           });
    return out;
}

Tensor linear_rows(Tape* tape, const Tensor& X, const Tensor& weight, const Tensor& bias) {
    check(X.rank() == 2, "linear_rows input must be [N,n], got " + shape_str(X.shape));
    check(weight.rank() == 2 && bias.rank() == 1, "linear_rows weight/bias rank");
    const int rows = X.shape[0], n = X.shape[1], m = weight.shape[0];
    check(weight.shape[1] == n, "linear_rows weight " + shape_str(weight.shape) + " vs input " +
                                    shape_str(X.shape));
    check(bias.shape[0] == m, "linear_rows bias " + shape_str(bias.shape));

    Tensor out({rows, m});
    for (int r = 0; r < rows; ++r) {
        for (int i = 0; i < m; ++i) {
            double acc = bias.data[static_cast<std::size_t>(i)];
            for (int j = 0; j < n; ++j) {
                acc += weight.data[static_cast<std::size_t>(i) * n + j] * X.data[static_cast<std::size_t>(r) * n + j];
            }
            out.data[static_cast<std::size_t>(r) * m + i] = acc;
        }
    }
    add_macs(static_cast<std::uint64_t>(rows) * m * n);

    const int x_node = node_on(tape, X);
    const int w_node = node_on(tape, weight);
    const int b_node = node_on(tape, bias);
    finish(tape, out,
           x_node != Tensor::kNoNode || w_node != Tensor::kNoNode || b_node != Tensor::kNoNode,
           [x_node, w_node, b_node, x = X.data, wt = weight.data, rows, m, n](
               std::span<const double> g, Tape& t) {
               if (x_node != Tensor::kNoNode) {
                   std::vector<double> gx(x.size(), 0.0);
                   for (int r = 0; r < rows; ++r)
                       for (int i = 0; i < m; ++i) {
                           const double go = g[static_cast<std::size_t>(r) * m + i];
                           for (int j = 0; j < n; ++j)
                               gx[static_cast<std::size_t>(r) * n + j] += go * wt[static_cast<std::size_t>(i) * n + j];
                       }
                   t.accumulate(x_node, gx);
               }
               if (w_node != Tensor::kNoNode) {
                   std::vector<double> gw(wt.size(), 0.0);
                   for (int r = 0; r < rows; ++r)
                       for (int i = 0; i < m; ++i) {
                           const double go = g[static_cast<std::size_t>(r) * m + i];
                           for (int j = 0; j < n; ++j)
                               gw[static_cast<std::size_t>(i) * n + j] += go * x[static_cast<std::size_t>(r) * n + j];
                       }
                   t.accumulate(w_node, gw);
               }
               if (b_node != Tensor::kNoNode) {
                   std::vector<double> gb(static_cast<std::size_t>(m), 0.0);
                   for (int r = 0; r < rows; ++r)
                       for (int i = 0; i < m; ++i) gb[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(r) * m + i];
                   t.accumulate(b_node, gb);
               }
           });
    return out;
}

Tensor matmul(Tape* tape, const Tensor& A, const Tensor& B) {
    check(A.rank() == 2 && B.rank() == 2, "matmul needs rank-2 inputs");
    const int m = A.shape[0], k = A.shape[1], n = B.shape[1];
    check(B.shape[0] == k, "matmul inner dims: " + shape_str(A.shape) + " x " + shape_str(B.shape));

    Tensor out({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p)
                acc += A.data[static_cast<std::size_t>(i) * k + p] * B.data[static_cast<std::size_t>(p) * n + j];
            out.data[static_cast<std::size_t>(i) * n + j] = acc;
        }

    const int a_node = node_on(tape, A);
    const int b_node = node_on(tape, B);
    finish(tape, out, a_node != Tensor::kNoNode || b_node != Tensor::kNoNode,
           [a_node, b_node, a = A.data, b = B.data, m, k, n](std::span<const double> g, Tape& t) {
               if (a_node != Tensor::kNoNode) {
                   std::vector<double> ga(a.size(), 0.0);
                   for (int i = 0; i < m; ++i)
                       for (int p = 0; p < k; ++p) {
                           double acc = 0.0;
                           for (int j = 0; j < n; ++j)
                               acc += g[static_cast<std::size_t>(i) * n + j] * b[static_cast<std::size_t>(p) * n + j];
                           ga[static_cast<std::size_t>(i) * k + p] = acc;
                       }
                   t.accumulate(a_node, ga);
               }
               if (b_node != Tensor::kNoNode) {
                   std::vector<double> gb(b.size(), 0.0);
                   for (int p = 0; p < k; ++p)
                       for (int j = 0; j < n; ++j) {
                           double acc = 0.0;
                           for (int i = 0; i < m; ++i)
                               acc += a[static_cast<std::size_t>(i) * k + p] * g[static_cast<std::size_t>(i) * n + j];
                           gb[static_cast<std::size_t>(p) * n + j] = acc;
                       }
                   t.accumulate(b_node, gb);
               }
           });
    return out;
}

namespace {

void softmax_row(const double* x, double* y, int n) {
    double mx = x[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        y[i] = std::exp(x[i] - mx);
        sum += y[i];
    }
    for (int i = 0; i < n; ++i) y[i] /= sum;
}

void softmax_row_backward(const double* y, const double* g, double* gx, int n) {
    double dot = 0.0;
    for (int i = 0; i < n; ++i) dot += g[i] * y[i];
    for (int i = 0; i < n; ++i) gx[i] += y[i] * (g[i] - dot);
}

}  // namespace

Tensor softmax(Tape* tape, const Tensor& input) {
    check(input.rank() == 1 && input.shape[0] >= 1, "softmax needs a non-empty rank-1 tensor");
    const int n = input.shape[0];
    Tensor out({n});
    softmax_row(input.data.data(), out.data.data(), n);

    const int x_node = node_on(tape, input);
    finish(tape, out, x_node != Tensor::kNoNode,
           [x_node, y = out.data, n](std::span<const double> g, Tape& t) {
               std::vector<double> gx(static_cast<std::size_t>(n), 0.0);
               softmax_row_backward(y.data(), g.data(), gx.data(), n);
               t.accumulate(x_node, gx);
           });
    return out;
}

Tensor softmax_rows(Tape* tape, const Tensor& input) {
    check(input.rank() == 2 && input.shape[1] >= 1, "softmax_rows needs [N,m] with m>=1");
    const int rows = input.shape[0], n = input.shape[1];
    Tensor out({rows, n});
    for (int r = 0; r < rows; ++r) {
        softmax_row(input.data.data() + static_cast<std::size_t>(r) * n,
                    out.data.data() + static_cast<std::size_t>(r) * n, n);
    }

    const int x_node = node_on(tape, input);
    finish(tape, out, x_node != Tensor::kNoNode,
           [x_node, y = out.data, rows, n](std::span<const double> g, Tape& t) {
               std::vector<double> gx(y.size(), 0.0);
               for (int r = 0; r < rows; ++r) {
                   softmax_row_backward(y.data() + static_cast<std::size_t>(r) * n,
                                        g.data() + static_cast<std::size_t>(r) * n,
                                        gx.data() + static_cast<std::size_t>(r) * n, n);
               }
               t.accumulate(x_node, gx);
           });
    return out;
}

Tensor relu(Tape* tape, const Tensor& x) {
    Tensor out(x.shape);
    for (int i = 0; i < x.size(); ++i) out.data[static_cast<std::size_t>(i)] = std::max(0.0, x.data[static_cast<std::size_t>(i)]);

    const int x_node = node_on(tape, x);
    finish(tape, out, x_node != Tensor::kNoNode,
           [x_node, xv = x.data](std::span<const double> g, Tape& t) {
               std::vector<double> gx(xv.size(), 0.0);
               for (std::size_t i = 0; i < xv.size(); ++i) gx[i] = xv[i] > 0.0 ? g[i] : 0.0;
               t.accumulate(x_node, gx);
           });
    return out;
}

namespace {

Tensor binary_elementwise(Tape* tape, const Tensor& a, const Tensor& b, const char* name,
                          double (*fwd)(double, double),
                          void (*bwd)(double ga_in, double av, double bv, double& ga, double& gb)) {
    check(a.shape == b.shape, std::string(name) + " shape mismatch: " + shape_str(a.shape) +
                                  " vs " + shape_str(b.shape));
    Tensor out(a.shape);
    for (int i = 0; i < a.size(); ++i)
        out.data[static_cast<std::size_t>(i)] = fwd(a.data[static_cast<std::size_t>(i)], b.data[static_cast<std::size_t>(i)]);

    const int a_node = node_on(tape, a);
    const int b_node = node_on(tape, b);
    finish(tape, out, a_node != Tensor::kNoNode || b_node != Tensor::kNoNode,
           [a_node, b_node, av = a.data, bv = b.data, bwd](std::span<const double> g, Tape& t) {
               std::vector<double> ga(av.size(), 0.0), gb(av.size(), 0.0);
               for (std::size_t i = 0; i < av.size(); ++i) bwd(g[i], av[i], bv[i], ga[i], gb[i]);
               t.accumulate(a_node, ga);
               t.accumulate(b_node, gb);
           });
    return out;
}

}  // namespace

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
    return binary_elementwise(tape, a, b, "add", [](double x, double y) { return x + y; },
                              [](double g, double, double, double& ga, double& gb) {
                                  ga = g;
                                  gb = g;
                              });
}

Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
    return binary_elementwise(tape, a, b, "sub", [](double x, double y) { return x - y; },
                              [](double g, double, double, double& ga, double& gb) {
                                  ga = g;
                                  gb = -g;
                              });
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
    return binary_elementwise(tape, a, b, "mul", [](double x, double y) { return x * y; },
                              [](double g, double x, double y, double& ga, double& gb) {
                                  ga = g * y;
                                  gb = g * x;
                              });
}

Tensor scale(Tape* tape, const Tensor& x, double c) {
    Tensor out(x.shape);
    for (int i = 0; i < x.size(); ++i) out.data[static_cast<std::size_t>(i)] = c * x.data[static_cast<std::size_t>(i)];
    const int x_node = node_on(tape, x);
    finish(tape, out, x_node != Tensor::kNoNode,
           [x_node, c, n = x.size()](std::span<const double> g, Tape& t) {
               std::vector<double> gx(static_cast<std::size_t>(n));
               for (int i = 0; i < n; ++i) gx[static_cast<std::size_t>(i)] = c * g[static_cast<std::size_t>(i)];
               t.accumulate(x_node, gx);
           });
    return out;
}

Tensor sub_from_scalar(Tape* tape, double c, const Tensor& x) {
    Tensor out(x.shape);
    for (int i = 0; i < x.size(); ++i) out.data[static_cast<std::size_t>(i)] = c - x.data[static_cast<std::size_t>(i)];
    const int x_node = node_on(tape, x);
    finish(tape, out, x_node != Tensor::kNoNode,
           [x_node, n = x.size()](std::span<const double> g, Tape& t) {
               std::vector<double> gx(static_cast<std::size_t>(n));
               for (int i = 0; i < n; ++i) gx[static_cast<std::size_t>(i)] = -g[static_cast<std::size_t>(i)];
               t.accumulate(x_node, gx);
           });
    return out;
}

Tensor clamp_min(Tape* tape, const Tensor& x, double lo) {
    Tensor out(x.shape);
    for (int i = 0; i < x.size(); ++i) out.data[static_cast<std::size_t>(i)] = std::max(lo, x.data[static_cast<std::size_t>(i)]);
    const int x_node = node_on(tape, x);
    finish(tape, out, x_node != Tensor::kNoNode,
           [x_node, xv = x.data, lo](std::span<const double> g, Tape& t) {
               std::vector<double> gx(xv.size(), 0.0);
               for (std::size_t i = 0; i < xv.size(); ++i) gx[i] = xv[i] > lo ? g[i] : 0.0;
               t.accumulate(x_node, gx);
           });
    return out;
}

Tensor log_op(Tape* tape, const Tensor& x) {
    Tensor out(x.shape);
    for (int i = 0; i < x.size(); ++i) out.data[static_cast<std::size_t>(i)] = std::log(x.data[static_cast<std::size_t>(i)]);
    const int x_node = node_on(tape, x);
    finish(tape, out, x_node != Tensor::kNoNode,
           [x_node, xv = x.data](std::span<const double> g, Tape& t) {
               std::vector<double> gx(xv.size());
               for (std::size_t i = 0; i < xv.size(); ++i) gx[i] = g[i] / xv[i];
               t.accumulate(x_node, gx);
           });
    return out;
}

Tensor pow_scalar(Tape* tape, const Tensor& x, double p) {
    Tensor out(x.shape);
    if (p == 0.0) {
        std::fill(out.data.begin(), out.data.end(), 1.0);
    } else {
        for (int i = 0; i < x.size(); ++i) out.data[static_cast<std::size_t>(i)] = std::pow(x.data[static_cast<std::size_t>(i)], p);
    }
    const int x_node = node_on(tape, x);
    finish(tape, out, x_node != Tensor::kNoNode,
           [x_node, xv = x.data, p](std::span<const double> g, Tape& t) {
               std::vector<double> gx(xv.size(), 0.0);
               if (p != 0.0) {
                   for (std::size_t i = 0; i < xv.size(); ++i)
                       gx[i] = g[i] * p * std::pow(xv[i], p - 1.0);
               }
               t.accumulate(x_node, gx);
           });
    return out;
}

Tensor add_channel_bias(Tape* tape, const Tensor& x, const Tensor& bias) {
    check(x.rank() == 3, "add_channel_bias input must be [C,H,W]");
    check(bias.rank() == 1 && bias.shape[0] == x.shape[0],
          "add_channel_bias bias " + shape_str(bias.shape) + " vs input " + shape_str(x.shape));
    const int c = x.shape[0], plane = x.shape[1] * x.shape[2];
    Tensor out(x.shape);
    for (int ch = 0; ch < c; ++ch) {
        const double b = bias.data[static_cast<std::size_t>(ch)];
        for (int i = 0; i < plane; ++i)
            out.data[static_cast<std::size_t>(ch) * plane + i] = x.data[static_cast<std::size_t>(ch) * plane + i] + b;
    }
    const int x_node = node_on(tape, x);
    const int b_node = node_on(tape, bias);
    finish(tape, out, x_node != Tensor::kNoNode || b_node != Tensor::kNoNode,
           [x_node, b_node, c, plane](std::span<const double> g, Tape& t) {
               t.accumulate(x_node, g);
               if (b_node != Tensor::kNoNode) {
                   std::vector<double> gb(static_cast<std::size_t>(c), 0.0);
                   for (int ch = 0; ch < c; ++ch)
                       for (int i = 0; i < plane; ++i) gb[static_cast<std::size_t>(ch)] += g[static_cast<std::size_t>(ch) * plane + i];
                   t.accumulate(b_node, gb);
               }
           });
    return out;
}

Tensor sum_all(Tape* tape, const Tensor& x) {
    double s = 0.0;
    for (double v : x.data) s += v;
    Tensor out = Tensor::scalar(s);
    const int x_node = node_on(tape, x);
    finish(tape, out, x_node != Tensor::kNoNode,
           [x_node, n = x.size()](std::span<const double> g, Tape& t) {
               std::vector<double> gx(static_cast<std::size_t>(n), g[0]);
               t.accumulate(x_node, gx);
           });
    return out;
}

Tensor slice(Tape* tape, const Tensor& x, int offset, int len) {
    check(x.rank() == 1, "slice needs a rank-1 tensor");
    check(offset >= 0 && len >= 1 && offset + len <= x.shape[0],
          "slice [" + std::to_string(offset) + "," + std::to_string(offset + len) +
              ") out of range for " + shape_str(x.shape));
    Tensor out({len});
    std::copy(x.data.begin() + offset, x.data.begin() + offset + len, out.data.begin());
    const int x_node = node_on(tape, x);
    finish(tape, out, x_node != Tensor::kNoNode,
           [x_node, offset, len](std::span<const double> g, Tape& t) {
               for (int i = 0; i < len; ++i) t.accumulate_at(x_node, offset + i, g[static_cast<std::size_t>(i)]);
           });
    return out;
}

Tensor concat(Tape* tape, const Tensor& a, const Tensor& b) {
    check(a.rank() == 1 && b.rank() == 1, "concat needs rank-1 tensors");
    Tensor out({a.shape[0] + b.shape[0]});
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.shape[0]);
    const int a_node = node_on(tape, a);
    const int b_node = node_on(tape, b);
    finish(tape, out, a_node != Tensor::kNoNode || b_node != Tensor::kNoNode,
           [a_node, b_node, na = a.size(), nb = b.size()](std::span<const double> g, Tape& t) {
               t.accumulate(a_node, g.subspan(0, static_cast<std::size_t>(na)));
               t.accumulate(b_node, g.subspan(static_cast<std::size_t>(na), static_cast<std::size_t>(nb)));
           });
    return out;
}

Tensor concat_cols(Tape* tape, const Tensor& A, const Tensor& B) {
    check(A.rank() == 2 && B.rank() == 2 && A.shape[0] == B.shape[0],
          "concat_cols needs [N,a] and [N,b]: " + shape_str(A.shape) + " vs " + shape_str(B.shape));
    const int rows = A.shape[0], ca = A.shape[1], cb = B.shape[1];
    Tensor out({rows, ca + cb});
    for (int r = 0; r < rows; ++r) {
        std::copy(A.data.begin() + static_cast<std::size_t>(r) * ca,
                  A.data.begin() + static_cast<std::size_t>(r + 1) * ca,
                  out.data.begin() + static_cast<std::size_t>(r) * (ca + cb));
        std::copy(B.data.begin() + static_cast<std::size_t>(r) * cb,
                  B.data.begin() + static_cast<std::size_t>(r + 1) * cb,
                  out.data.begin() + static_cast<std::size_t>(r) * (ca + cb) + ca);
    }
    const int a_node = node_on(tape, A);
    const int b_node = node_on(tape, B);
    finish(tape, out, a_node != Tensor::kNoNode || b_node != Tensor::kNoNode,
           [a_node, b_node, rows, ca, cb](std::span<const double> g, Tape& t) {
               if (a_node != Tensor::kNoNode) {
                   std::vector<double> ga(static_cast<std::size_t>(rows) * ca);
                   for (int r = 0; r < rows; ++r)
                       for (int i = 0; i < ca; ++i)
                           ga[static_cast<std::size_t>(r) * ca + i] = g[static_cast<std::size_t>(r) * (ca + cb) + i];
                   t.accumulate(a_node, ga);
               }
               if (b_node != Tensor::kNoNode) {
                   std::vector<double> gb(static_cast<std::size_t>(rows) * cb);
                   for (int r = 0; r < rows; ++r)
                       for (int i = 0; i < cb; ++i)
                           gb[static_cast<std::size_t>(r) * cb + i] = g[static_cast<std::size_t>(r) * (ca + cb) + ca + i];
                   t.accumulate(b_node, gb);
               }
           });
    return out;
}

Tensor reshape(Tape* tape, const Tensor& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.size()) {
        throw ShapeError("reshape from " + shape_str(x.shape) + " to " + shape_str(new_shape));
    }
    Tensor out(std::move(new_shape), x.data);
    const int x_node = node_on(tape, x);
    finish(tape, out, x_node != Tensor::kNoNode,
           [x_node](std::span<const double> g, Tape& t) { t.accumulate(x_node, g); });
    return out;
}

Tensor take_per_row(Tape* tape, const Tensor& X, const std::vector<int>& cols) {
    check(X.rank() == 2, "take_per_row needs [N,m]");
    const int rows = X.shape[0], m = X.shape[1];
    check(static_cast<int>(cols.size()) == rows, "take_per_row needs one column per row");
    for (int c : cols) check(c >= 0 && c < m, "take_per_row column out of range");
    Tensor out({rows});
    for (int r = 0; r < rows; ++r) {
        out.data[static_cast<std::size_t>(r)] = X.data[static_cast<std::size_t>(r) * m + cols[static_cast<std::size_t>(r)]];
    }
    const int x_node = node_on(tape, X);
    finish(tape, out, x_node != Tensor::kNoNode,
           [x_node, cols, m](std::span<const double> g, Tape& t) {
               for (std::size_t r = 0; r < cols.size(); ++r) {
                   t.accumulate_at(x_node, static_cast<int>(r) * m + cols[r], g[r]);
               }
           });
    return out;
}

Tensor select_rows(Tape* tape, const Tensor& X, const std::vector<int>& ids) {
    check(X.rank() == 2, "select_rows needs [N,m]");
    const int rows = X.shape[0], m = X.shape[1];
    for (int id : ids) check(id >= 0 && id < rows, "select_rows id out of range");
    Tensor out({static_cast<int>(ids.size()), m});
    for (std::size_t r = 0; r < ids.size(); ++r) {
        std::copy(X.data.begin() + static_cast<std::size_t>(ids[r]) * m,
                  X.data.begin() + static_cast<std::size_t>(ids[r] + 1) * m,
                  out.data.begin() + r * m);
    }
    const int x_node = node_on(tape, X);
    finish(tape, out, x_node != Tensor::kNoNode,
           [x_node, ids, m](std::span<const double> g, Tape& t) {
               for (std::size_t r = 0; r < ids.size(); ++r)
                   for (int i = 0; i < m; ++i)
                       t.accumulate_at(x_node, ids[static_cast<std::size_t>(r)] * m + i, g[r * static_cast<std::size_t>(m) + i]);
           });
    return out;
}

Tensor merge_rows(Tape* tape, const std::vector<const Tensor*>& parts,
                  const std::vector<std::vector<int>>& ids, int total_rows) {
    check(parts.size() == ids.size(), "merge_rows parts/ids count mismatch");
    check(!parts.empty(), "merge_rows needs at least one part");
    const int m = parts[0]->rank() == 2 ? parts[0]->shape[1] : -1;
    check(m > 0, "merge_rows parts must be [k,m]");
    std::vector<int> covered(static_cast<std::size_t>(total_rows), 0);
    for (std::size_t p = 0; p < parts.size(); ++p) {
        check(parts[p]->rank() == 2 && parts[p]->shape[1] == m, "merge_rows column mismatch");
        check(parts[p]->shape[0] == static_cast<int>(ids[p].size()), "merge_rows row-count mismatch");
        for (int id : ids[p]) {
            check(id >= 0 && id < total_rows, "merge_rows target row out of range");
            covered[static_cast<std::size_t>(id)] += 1;
        }
    }
    for (int c : covered) check(c == 1, "merge_rows must cover every target row exactly once");

    Tensor out({total_rows, m});
    for (std::size_t p = 0; p < parts.size(); ++p) {
        for (std::size_t r = 0; r < ids[p].size(); ++r) {
            std::copy(parts[p]->data.begin() + r * static_cast<std::size_t>(m),
                      parts[p]->data.begin() + (r + 1) * static_cast<std::size_t>(m),
                      out.data.begin() + static_cast<std::size_t>(ids[p][r]) * m);
        }
    }

    bool any = false;
    std::vector<int> part_nodes(parts.size(), Tensor::kNoNode);
    for (std::size_t p = 0; p < parts.size(); ++p) {
        part_nodes[p] = node_on(tape, *parts[p]);
        any = any || part_nodes[p] != Tensor::kNoNode;
    }
    finish(tape, out, any, [part_nodes, ids, m](std::span<const double> g, Tape& t) {
        for (std::size_t p = 0; p < part_nodes.size(); ++p) {
            if (part_nodes[p] == Tensor::kNoNode) continue;
            std::vector<double> gp(ids[p].size() * static_cast<std::size_t>(m));
            for (std::size_t r = 0; r < ids[p].size(); ++r)
                for (int i = 0; i < m; ++i)
                    gp[r * static_cast<std::size_t>(m) + i] = g[static_cast<std::size_t>(ids[p][r]) * m + i];
            t.accumulate(part_nodes[p], gp);
        }
    });
    return out;
}

Tensor attention_scatter(Tape* tape, const Tensor& S) {
    check(S.rank() == 2 && S.shape[1] == S.shape[0] - 1,
          "attention_scatter needs [N,N-1], got " + shape_str(S.shape));
    const int n = S.shape[0];
    Tensor out({n, n});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            out.data[static_cast<std::size_t>(i) * n + j] = S.data[static_cast<std::size_t>(i) * (n - 1) + (j < i ? j : j - 1)];
        }
    const int s_node = node_on(tape, S);
    finish(tape, out, s_node != Tensor::kNoNode,
           [s_node, n](std::span<const double> g, Tape& t) {
               std::vector<double> gs(static_cast<std::size_t>(n) * (n - 1));
               for (int i = 0; i < n; ++i)
                   for (int j = 0; j < n; ++j) {
                       if (j == i) continue;
                       gs[static_cast<std::size_t>(i) * (n - 1) + (j < i ? j : j - 1)] = g[static_cast<std::size_t>(i) * n + j];
                   }
               t.accumulate(s_node, gs);
           });
    return out;
}

Tensor pool_gather(Tape* tape, const Tensor& feature_map, const std::vector<int>& cols) {
    check(feature_map.rank() == 3, "pool_gather needs [C,H,W]");
    const int c = feature_map.shape[0], h = feature_map.shape[1], w = feature_map.shape[2];
    check(static_cast<int>(cols.size()) == h,
          "pool_gather needs one column per grid row: got " + std::to_string(cols.size()) +
              " for height " + std::to_string(h));
    Tensor out({h * c});
    for (int j = 0; j < h; ++j) {
        const int x = cols[static_cast<std::size_t>(j)];
        if (x < 0 || x >= w) continue;  // out of bounds -> stays zero
        for (int ch = 0; ch < c; ++ch)
            out.data[static_cast<std::size_t>(j) * c + ch] =
                feature_map.data[(static_cast<std::size_t>(ch) * h + (h - 1 - j)) * w + x];
    }
    const int f_node = node_on(tape, feature_map);
    finish(tape, out, f_node != Tensor::kNoNode,
           [f_node, cols, c, h, w](std::span<const double> g, Tape& t) {
               for (int j = 0; j < h; ++j) {
                   const int x = cols[static_cast<std::size_t>(j)];
                   if (x < 0 || x >= w) continue;
                   for (int ch = 0; ch < c; ++ch)
                       t.accumulate_at(f_node, (ch * h + (h - 1 - j)) * w + x, g[static_cast<std::size_t>(j) * c + ch]);
               }
           });
    return out;
}

Tensor pool_gather_rows(Tape* tape, const Tensor& feature_map,
                        const std::vector<std::vector<int>>& col_sets) {
    check(feature_map.rank() == 3, "pool_gather_rows needs [C,H,W]");
    const int c = feature_map.shape[0], h = feature_map.shape[1], w = feature_map.shape[2];
    const int n = static_cast<int>(col_sets.size());
    check(n >= 1, "pool_gather_rows needs at least one column set");
    for (const auto& cols : col_sets) {
        check(static_cast<int>(cols.size()) == h, "pool_gather_rows needs one column per grid row");
    }
    const int width = h * c;
    Tensor out({n, width});
    for (int r = 0; r < n; ++r) {
        const auto& cols = col_sets[static_cast<std::size_t>(r)];
        for (int j = 0; j < h; ++j) {
            const int x = cols[static_cast<std::size_t>(j)];
            if (x < 0 || x >= w) continue;
            for (int ch = 0; ch < c; ++ch) {
                out.data[static_cast<std::size_t>(r) * width + j * c + ch] =
                    feature_map.data[(static_cast<std::size_t>(ch) * h + (h - 1 - j)) * w + x];
            }
        }
    }
    const int f_node = node_on(tape, feature_map);
    finish(tape, out, f_node != Tensor::kNoNode,
           [f_node, col_sets, c, h, w, width](std::span<const double> g, Tape& t) {
               for (std::size_t r = 0; r < col_sets.size(); ++r) {
                   const auto& cols = col_sets[r];
                   for (int j = 0; j < h; ++j) {
                       const int x = cols[static_cast<std::size_t>(j)];
                       if (x < 0 || x >= w) continue;
                       for (int ch = 0; ch < c; ++ch) {
                           t.accumulate_at(f_node, (ch * h + (h - 1 - j)) * w + x,
                                           g[r * static_cast<std::size_t>(width) + static_cast<std::size_t>(j * c + ch)]);
                       }
                   }
               }
           });
    return out;
}

Tensor smooth_l1_mean(Tape* tape, const Tensor& pred, const Tensor& target) {
    check(pred.shape == target.shape && pred.rank() == 1 && pred.size() >= 1,
          "smooth_l1_mean needs matching non-empty rank-1 tensors");
    const int n = pred.size();
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const double d = pred.data[static_cast<std::size_t>(i)] - target.data[static_cast<std::size_t>(i)];
        const double a = std::abs(d);
        acc += a < 1.0 ? 0.5 * d * d : a - 0.5;
    }
    Tensor out = Tensor::scalar(acc / n);

    // The target side is always treated as a constant.
    const int p_node = node_on(tape, pred);
    finish(tape, out, p_node != Tensor::kNoNode,
           [p_node, pv = pred.data, tv = target.data, n](std::span<const double> g, Tape& t) {
               std::vector<double> gp(static_cast<std::size_t>(n));
               for (int i = 0; i < n; ++i) {
                   const double d = pv[static_cast<std::size_t>(i)] - tv[static_cast<std::size_t>(i)];
                   gp[static_cast<std::size_t>(i)] = g[0] * std::clamp(d, -1.0, 1.0) / n;
               }
               t.accumulate(p_node, gp);
           });
    return out;
}

}  // namespace laneatt
