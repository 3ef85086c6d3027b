#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "laneatt/errors.hpp"

namespace laneatt {

using Shape = std::vector<int>;

int shape_numel(const Shape& shape);

/// Dense row-major tensor of 64-bit floats. Tensors are plain values; `node`
/// is the handle of the tape node that produced them (kNoNode when the value
/// was never recorded, e.g. constants and inference-only results).
struct Tensor {
    static constexpr int kNoNode = -1;

    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // optional; filled from Tape::grad on demand
    int node = kNoNode;
    std::uint64_t tape_id = 0;

    Tensor() = default;
    explicit Tensor(Shape s);
    Tensor(Shape s, std::vector<double> values);

    static Tensor scalar(double v);
    static Tensor zeros(Shape s);
    static Tensor full(Shape s, double v);

    int size() const { return static_cast<int>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int extent(int axis) const;

    /// Value of a single-element tensor.
    double value() const;

    // Indexed access for the shapes the model actually uses.
    double& at2(int r, int c);
    double at2(int r, int c) const;
    double& at3(int c, int y, int x);
    double at3(int c, int y, int x) const;
};

/// Reverse-mode gradient tape. Ops append nodes in execution order, so the
/// record is topologically sorted by construction. Saved forward values live
/// inside each node's backward closure (no recomputation). The tape is
/// confined to a single training thread.
class Tape {
public:
    using BackwardFn = std::function<void(std::span<const double> out_grad, Tape& tape)>;

    Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    std::uint64_t id() const { return id_; }
    std::size_t num_nodes() const { return nodes_.size(); }

    /// Registers a leaf (trainable or watched input). Overwrites any handle
    /// the tensor carried from a previous tape.
    int watch(Tensor& t);

    /// Runs the backward sweep from a scalar output recorded on this tape.
    void backward(const Tensor& scalar_output);

    /// Gradient of the last backward() output w.r.t. a tensor on this tape.
    const std::vector<double>& grad(const Tensor& t) const;

    // --- recording interface (used by the ops) ---
    int record(int out_numel, BackwardFn fn);
    void accumulate(int node, std::span<const double> g);
    void accumulate_at(int node, int index, double g);

    /// Node handle of `t` on this tape, or kNoNode if `t` is a constant here.
    int node_of(const Tensor& t) const;

private:
    struct Node {
        BackwardFn backward;
        int numel;
    };
    std::vector<Node> nodes_;
    std::vector<std::vector<double>> grads_;
    std::uint64_t id_;
    bool ran_backward_ = false;
};

// --- MAC accounting -------------------------------------------------------
// Counts multiply-accumulates of conv2d / dense / linear_rows forward passes
// only (the dominant terms). Elementwise ops, the attention matrix product
// and backward sweeps are excluded; the convention is printed by `bench`.

std::uint64_t mac_total();
void reset_mac_counter();
void add_macs(std::uint64_t n);

// --- primitive ops --------------------------------------------------------
// Every op takes the tape as the first argument; pass nullptr for
// inference-only forward passes. Inputs whose node handle belongs to another
// tape are treated as constants.

/// 2-D convolution, input [C_in,H,W] x kernel [C_out,C_in,kh,kw] -> [C_out,H',W'].
/// MACs += C_out*C_in*kh*kw*H'*W'.
Tensor conv2d(Tape* tape, const Tensor& input, const Tensor& kernel, int stride, int padding);

/// Fully connected layer on a single vector: out[i] = sum_j w[i,j] x[j] + b[i].
/// MACs += m*n.
Tensor dense(Tape* tape, const Tensor& input, const Tensor& weight, const Tensor& bias);

/// dense applied to every row of X [N,n] -> [N,m]. MACs += N*m*n.
Tensor linear_rows(Tape* tape, const Tensor& X, const Tensor& weight, const Tensor& bias);

/// Plain matrix product [m,k] x [k,n] -> [m,n]; not MAC-counted.
Tensor matmul(Tape* tape, const Tensor& A, const Tensor& B);

/// Numerically stabilized softmax over a rank-1 tensor.
Tensor softmax(Tape* tape, const Tensor& input);

/// Row-wise softmax over a rank-2 tensor.
Tensor softmax_rows(Tape* tape, const Tensor& input);

Tensor relu(Tape* tape, const Tensor& x);
Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape* tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape* tape, const Tensor& x, double c);

/// c - x, elementwise.
Tensor sub_from_scalar(Tape* tape, double c, const Tensor& x);

/// max(x, lo) elementwise; gradient is zero where the clamp is active.
Tensor clamp_min(Tape* tape, const Tensor& x, double lo);

Tensor log_op(Tape* tape, const Tensor& x);
Tensor pow_scalar(Tape* tape, const Tensor& x, double p);

/// Per-channel bias add on a [C,H,W] tensor.
Tensor add_channel_bias(Tape* tape, const Tensor& x, const Tensor& bias);

Tensor sum_all(Tape* tape, const Tensor& x);

/// Contiguous sub-vector of a rank-1 tensor.
Tensor slice(Tape* tape, const Tensor& x, int offset, int len);

/// Concatenation of two rank-1 tensors.
Tensor concat(Tape* tape, const Tensor& a, const Tensor& b);

/// Column-wise concatenation of [N,a] and [N,b] -> [N,a+b].
Tensor concat_cols(Tape* tape, const Tensor& A, const Tensor& B);

/// Same data under a new shape (numel must match).
Tensor reshape(Tape* tape, const Tensor& x, Shape new_shape);

/// out[i] = X[i, cols[i]] for a [N,m] matrix -> [N].
Tensor take_per_row(Tape* tape, const Tensor& X, const std::vector<int>& cols);

/// Gather of rows from a [N,m] matrix -> [|ids|,m].
Tensor select_rows(Tape* tape, const Tensor& X, const std::vector<int>& ids);

/// Inverse of select_rows for disjoint row groups: scatters each part's rows
/// into a [total_rows, m] matrix. Every target row must be covered once.
Tensor merge_rows(Tape* tape, const std::vector<const Tensor*>& parts,
                  const std::vector<std::vector<int>>& ids, int total_rows);

/// Turns row-wise softmax scores S [N,N-1] into the anchor weight matrix
/// W [N,N] with a zero diagonal: W[i,j] = S[i,j] for j<i, S[i,j-1] for j>i.
Tensor attention_scatter(Tape* tape, const Tensor& S);

/// Pools one column per grid row from a [C,H,W] feature map into a vector of
/// length H*C, laid out row-major by grid row j then channel. Grid row j
/// counts from the image bottom, so it reads tensor row H-1-j. `cols[j]`
/// outside [0,W) contributes zeros.
Tensor pool_gather(Tape* tape, const Tensor& feature_map, const std::vector<int>& cols);

/// pool_gather for many column sets at once -> [N, H*C] (one row per set).
Tensor pool_gather_rows(Tape* tape, const Tensor& feature_map,
                        const std::vector<std::vector<int>>& col_sets);

/// Mean smooth-L1 between a prediction vector and a constant target:
/// mean_i of (0.5 d^2 if |d|<1 else |d|-0.5), d = pred[i]-target[i].
Tensor smooth_l1_mean(Tape* tape, const Tensor& pred, const Tensor& target);

}  // namespace laneatt
