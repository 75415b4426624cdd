#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "emopriv/rng.hpp"
#include "emopriv/tensor.hpp"

namespace emopriv::ad {

class Value;
using ValuePtr = std::shared_ptr<Value>;

// One node of the reverse-mode graph: forward tensor, accumulated gradient,
// and a closure that pushes this node's gradient into its parents.
class Value {
public:
    Tensor val;
    Tensor grad;  // same shape as val, starts at zero
    std::vector<ValuePtr> parents;
    std::function<void()> backprop;  // may be empty (leaf)
    const char* op = "leaf";

    explicit Value(Tensor t) : val(std::move(t)), grad(val.shape, 0.0) {}

    void zero_grad() { grad.fill(0.0); }
};

ValuePtr leaf(Tensor t);
ValuePtr leaf(std::vector<double> v);

enum class Activation { relu, tanh, sigmoid, identity };

// y = act(W x + b); x:[n], W:[m x n], b:[m].
ValuePtr dense(const ValuePtr& x, const ValuePtr& W, const ValuePtr& b,
               Activation act);

// Valid 1-d convolution with relu, stride 1. x:[T x Cin],
// kernels:[Cout x width x Cin], result [T-width+1 x Cout].
ValuePtr conv1d(const ValuePtr& x, const ValuePtr& kernels);

struct GruParams {
    ValuePtr Wz, Uz, bz;  // update gate
    ValuePtr Wr, Ur, br;  // reset gate
    ValuePtr Wh, Uh, bh;  // candidate

    std::vector<ValuePtr> all() const { return {Wz, Uz, bz, Wr, Ur, br, Wh, Uh, bh}; }
};

GruParams init_gru(size_t input_dim, size_t hidden_dim, Rng& rng);

// Standard GRU over x:[T x d]; returns all hidden states [T x w].
// h0 defaults to zeros when null.
ValuePtr gru_sequence(const ValuePtr& x, const GruParams& p,
                      const ValuePtr& h0 = nullptr);

// Column-wise mean over time: [T x d] -> [d].
ValuePtr mean_pool_time(const ValuePtr& x);

// Gradient reversal: identity forward, backward multiplies upstream by -lambda.
ValuePtr grl(const ValuePtr& x, double lambda);

// -w[label] * log softmax(logits)[label], max-subtraction stabilized.
ValuePtr weighted_cross_entropy(const ValuePtr& logits, size_t label,
                                const std::vector<double>& class_weights);

// Elementwise / structural primitives.
ValuePtr add(const ValuePtr& a, const ValuePtr& b);
ValuePtr mul(const ValuePtr& a, const ValuePtr& b);
ValuePtr one_minus(const ValuePtr& a);
ValuePtr sigmoid(const ValuePtr& a);
ValuePtr tanh_v(const ValuePtr& a);
ValuePtr relu(const ValuePtr& a);
ValuePtr matvec(const ValuePtr& W, const ValuePtr& x);
ValuePtr concat(const ValuePtr& a, const ValuePtr& b);
ValuePtr row(const ValuePtr& x, size_t r);
ValuePtr stack_rows(const std::vector<ValuePtr>& rows);
ValuePtr sum(const ValuePtr& x);
ValuePtr scale(const ValuePtr& x, double c);
ValuePtr mean_of(const std::vector<ValuePtr>& scalars);

std::vector<double> softmax(const Tensor& logits);

// Reverse topological sweep from a scalar loss. Gradients accumulate
// additively across fan-out. Throws on a non-scalar loss or a graph cycle.
void backward(const ValuePtr& loss);

// Max relative error between analytic gradients and central finite
// differences of `build` (which must reconstruct the loss graph from the
// current parameter values each call).
double finite_diff_check(const std::function<ValuePtr()>& build,
                         const std::vector<ValuePtr>& params,
                         double eps = 1e-4);

// Glorot-style uniform init in +-sqrt(6/(fan_in+fan_out)); biases stay zero.
ValuePtr init_matrix(size_t rows, size_t cols, Rng& rng);
ValuePtr init_bias(size_t n);
ValuePtr init_conv(size_t c_out, size_t width, size_t c_in, Rng& rng);

}  // namespace emopriv::ad
