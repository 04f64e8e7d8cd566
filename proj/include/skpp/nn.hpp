#pragma once
#include <functional>
#include <string>
#include <vector>

#include "skpp/rng.hpp"
#include "skpp/tensor.hpp"

namespace skpp {

// y = x W^T + b, W is [C_out x C_in].
Tensor linear_forward(const Parameter& W, const Parameter& b, const Tensor& x);
// Accumulates into W.g / b.g, returns dL/dx.
Tensor linear_backward(Parameter& W, Parameter& b, const Tensor& x, const Tensor& dy);

Tensor relu_forward(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& dy); // subgradient 0 at x = 0

// Uniform in [-sqrt(1/fan_in), +sqrt(1/fan_in)], deterministic per seed.
Parameter init_param(const std::string& name, std::vector<int> shape, int fan_in, Rng& rng);

// v <- v - lr * g, then grads are zeroed.
void sgd_step(const std::vector<Parameter*>& params, double lr);

struct Linear {
    Parameter W, b;
    Tensor last_x;

    void init(const std::string& name, int c_out, int c_in, Rng& rng);
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);
    void params(std::vector<Parameter*>& out) { out.push_back(&W); out.push_back(&b); }
};

struct BatchNorm {
    Parameter gamma, beta;
    Parameter run_mean, run_var; // frozen state, carried by checkpoints
    double momentum = 0.1;
    double eps = 1e-5;
    bool train = true;

    // forward cache (train mode)
    Tensor last_xhat;
    std::vector<double> last_var;
    int last_n = 0;

    void init(const std::string& name, int channels);
    int channels() const { return int(gamma.w.size()); }
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);
    void params(std::vector<Parameter*>& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
        out.push_back(&run_mean);
        out.push_back(&run_var);
    }
    // gamma = 1, beta = 0, running stats (0, 1): eval mode is then the
    // identity up to eps.
    void set_identity_eval();
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    bool pass = false;
    std::vector<std::pair<std::string, double>> per_param; // name -> max rel err
};

// Central finite differences (step h) on a sampled subset of coordinates of
// each parameter. `loss(with_grad)`: when with_grad is true the closure must
// run forward+backward and leave analytic gradients in param.g; when false
// it must return the loss without touching gradients.
GradCheckReport grad_check(const std::function<double(bool)>& loss,
                           const std::vector<Parameter*>& params, double tolerance,
                           double h = 1e-5, int min_coords = 32, uint64_t seed = 7);

} // namespace skpp
