#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "metanerv/errors.hpp"
#include "metanerv/rng.hpp"

namespace metanerv {

struct TensorData {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad; // sized lazily; empty means all-zero
    bool requires_grad = false;
    // Identity on the tape that last recorded this tensor. A tensor produced
    // on an older tape counts as a leaf on the current one.
    uint64_t tape_epoch = 0;
    int node_id = -1;
};

/// Dense row-major f64 tensor. Cheap shared-handle semantics: copies alias the
/// same storage, clone() makes a deep copy.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    /// Elements drawn uniformly from [lo, hi).
    static Tensor uniform(std::vector<int> shape, Rng& rng, double lo, double hi,
                          bool requires_grad = false);

    bool valid() const { return d_ != nullptr; }
    const std::vector<int>& shape() const { return d_->shape; }
    int64_t size() const { return static_cast<int64_t>(d_->data.size()); }

    std::vector<double>& data() { return d_->data; }
    const std::vector<double>& data() const { return d_->data; }

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool v) { d_->requires_grad = v; }

    /// Gradient buffer, allocated (zeroed) on first access.
    std::vector<double>& grad();
    const std::vector<double>& grad() const;
    bool has_grad() const { return !d_->grad.empty(); }
    void zero_grad();

    /// Value of a one-element tensor.
    double item() const;

    Tensor clone() const;

    std::shared_ptr<TensorData> impl() const { return d_; }

private:
    explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}
    std::shared_ptr<TensorData> d_;
};

int64_t shape_numel(const std::vector<int>& shape);

/// Reverse-mode tape. Rebuilt per forward pass (define-by-run); ops record a
/// node whenever an input is grad-tracked. backward() walks the record in
/// reverse exactly once.
class Tape {
public:
    Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // -- elementwise / linear algebra -------------------------------------
    Tensor matmul(const Tensor& a, const Tensor& b);
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor sub(const Tensor& a, const Tensor& b);
    Tensor mul(const Tensor& a, const Tensor& b);
    Tensor div(const Tensor& a, const Tensor& b);
    Tensor scale(const Tensor& a, double s);
    Tensor offset(const Tensor& a, double c);
    Tensor abs(const Tensor& a);
    Tensor gelu(const Tensor& a);
    Tensor sigmoid(const Tensor& a);
    Tensor sum(const Tensor& a);
    Tensor mean(const Tensor& a);
    Tensor reshape(const Tensor& a, std::vector<int> shape);

    // -- spatial ops (C x H x W layout) ------------------------------------
    Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int padding);
    Tensor pixel_shuffle(const Tensor& x, int s);
    Tensor avg_pool2d(const Tensor& x, int f);
    /// Per-channel scale and shift: out[c,i,j] = gamma[c]*x[c,i,j] + beta[c].
    Tensor affine_channels(const Tensor& x, const Tensor& gamma, const Tensor& beta);
    /// Valid 1-D correlation along rows (width) with a fixed kernel; the
    /// kernel is a constant, only x gets a gradient.
    Tensor filter_rows(const Tensor& x, const std::vector<double>& kernel);
    /// Same along columns (height).
    Tensor filter_cols(const Tensor& x, const std::vector<double>& kernel);

    /// Populate grad fields of every tensor that fed the (scalar) loss.
    void backward(const Tensor& loss);

    size_t num_nodes() const { return nodes_.size(); }
    uint64_t epoch() const { return epoch_; }

private:
    struct Node {
        int out_id;
        std::vector<int> in_ids;
        std::shared_ptr<TensorData> out;
        std::vector<std::shared_ptr<TensorData>> ins;
        std::function<void()> backprop; // accumulates into ins' grads
    };

    bool tracked(const Tensor& t) const;
    int assign_id(const Tensor& t);
    void record(Tensor& out, std::initializer_list<Tensor> ins, std::function<void()> fn);

    std::vector<Node> nodes_;
    int next_id_ = 0;
    uint64_t epoch_;
};

/// Throws NonFiniteValue if any element is NaN/Inf. Engine ops call this on
/// their outputs; exposed for loss code built on raw buffers.
void check_finite(const std::vector<double>& v, const char* what = nullptr);

// -- Adam ------------------------------------------------------------------

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    int64_t step = 0;
};

/// In-place moment-based update with bias correction
/// (beta1=0.9, beta2=0.999, eps=1e-8).
void adam_step(std::vector<double>& params, const std::vector<double>& grads, AdamState& state,
               double lr);

} // namespace metanerv
