#include "skpp/nn.hpp"

#include <algorithm>
#include <cmath>

namespace skpp {

Tensor linear_forward(const Parameter& W, const Parameter& b, const Tensor& x) {
    check(W.shape.size() == 2, "linear: W must be 2-d");
    const int c_out = W.shape[0], c_in = W.shape[1];
    check(x.cols == c_in, "linear: input channels mismatch");
    check(int(b.w.size()) == c_out, "linear: bias size mismatch");
    Tensor y(x.rows, c_out);
#pragma omp parallel for if (x.rows > 256)
    for (int i = 0; i < x.rows; ++i) {
        const double* xi = x.row(i);
        double* yi = y.row(i);
        for (int o = 0; o < c_out; ++o) {
            double acc = b.w[o];
            const double* wo = &W.w[size_t(o) * c_in];
            for (int k = 0; k < c_in; ++k) acc += wo[k] * xi[k];
            yi[o] = acc;
        }
    }
    return y;
}

Tensor linear_backward(Parameter& W, Parameter& b, const Tensor& x, const Tensor& dy) {
    const int c_out = W.shape[0], c_in = W.shape[1];
    check(dy.cols == c_out && dy.rows == x.rows, "linear backward: grad shape mismatch");
    for (int i = 0; i < x.rows; ++i) {
        const double* xi = x.row(i);
        const double* di = dy.row(i);
        for (int o = 0; o < c_out; ++o) {
            b.g[o] += di[o];
            double* wo = &W.g[size_t(o) * c_in];
            for (int k = 0; k < c_in; ++k) wo[k] += di[o] * xi[k];
        }
    }
    Tensor dx(x.rows, c_in);
    for (int i = 0; i < x.rows; ++i) {
        const double* di = dy.row(i);
        double* dxi = dx.row(i);
        for (int o = 0; o < c_out; ++o) {
            const double* wo = &W.w[size_t(o) * c_in];
            for (int k = 0; k < c_in; ++k) dxi[k] += di[o] * wo[k];
        }
    }
    return dx;
}

Tensor relu_forward(const Tensor& x) {
    Tensor y = x;
    for (double& v : y.v) v = v > 0.0 ? v : 0.0;
    return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& dy) {
    check(x.same_shape(dy), "relu backward: shape mismatch");
    Tensor dx(x.rows, x.cols);
    for (size_t k = 0; k < x.v.size(); ++k) dx.v[k] = x.v[k] > 0.0 ? dy.v[k] : 0.0;
    return dx;
}

Parameter init_param(const std::string& name, std::vector<int> shape, int fan_in, Rng& rng) {
    check(fan_in >= 1, "init_param: fan_in must be >= 1");
    Parameter p(name, std::move(shape));
    const double bound = std::sqrt(1.0 / fan_in);
    for (auto& w : p.w) w = rng.uniform(-bound, bound);
    return p;
}

void sgd_step(const std::vector<Parameter*>& params, double lr) {
    check(lr > 0.0, "sgd_step: lr must be positive");
    for (Parameter* p : params) {
        if (!p->frozen)
            for (size_t k = 0; k < p->w.size(); ++k) p->w[k] -= lr * p->g[k];
        p->zero_grad();
    }
}

void Linear::init(const std::string& name, int c_out, int c_in, Rng& rng) {
    W = init_param(name + ".W", {c_out, c_in}, c_in, rng);
    b = init_param(name + ".b", {c_out}, c_in, rng);
}

Tensor Linear::forward(const Tensor& x) {
    last_x = x;
    return linear_forward(W, b, x);
}

Tensor Linear::backward(const Tensor& dy) { return linear_backward(W, b, last_x, dy); }

void BatchNorm::init(const std::string& name, int channels) {
    gamma = Parameter(name + ".gamma", {channels});
    beta = Parameter(name + ".beta", {channels});
    std::fill(gamma.w.begin(), gamma.w.end(), 1.0);
    run_mean = Parameter(name + ".running_mean", {channels});
    run_var = Parameter(name + ".running_var", {channels});
    run_mean.frozen = run_var.frozen = true;
    std::fill(run_var.w.begin(), run_var.w.end(), 1.0);
}

void BatchNorm::set_identity_eval() {
    std::fill(gamma.w.begin(), gamma.w.end(), 1.0);
    std::fill(beta.w.begin(), beta.w.end(), 0.0);
    std::fill(run_mean.w.begin(), run_mean.w.end(), 0.0);
    std::fill(run_var.w.begin(), run_var.w.end(), 1.0);
    train = false;
}

Tensor BatchNorm::forward(const Tensor& x) {
    const int C = channels();
    check(x.cols == C, "batchnorm: channel mismatch");
    const int N = x.rows;
    Tensor y(N, C);

    if (!train) {
        for (int c = 0; c < C; ++c) {
            const double inv = 1.0 / std::sqrt(run_var.w[c] + eps);
            for (int i = 0; i < N; ++i)
                y.at(i, c) = gamma.w[c] * (x.at(i, c) - run_mean.w[c]) * inv + beta.w[c];
        }
        last_n = 0;
        return y;
    }

    check(N >= 2, "batchnorm: train mode requires N >= 2");
    last_n = N;
    last_xhat = Tensor(N, C);
    last_var.assign(C, 0.0);
    for (int c = 0; c < C; ++c) {
        double mu = 0.0;
        for (int i = 0; i < N; ++i) mu += x.at(i, c);
        mu /= N;
        double var = 0.0;
        for (int i = 0; i < N; ++i) {
            const double d = x.at(i, c) - mu;
            var += d * d;
        }
        var /= N;
        last_var[c] = var;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int i = 0; i < N; ++i) {
            const double xh = (x.at(i, c) - mu) * inv;
            last_xhat.at(i, c) = xh;
            y.at(i, c) = gamma.w[c] * xh + beta.w[c];
        }
        run_mean.w[c] = (1.0 - momentum) * run_mean.w[c] + momentum * mu;
        run_var.w[c] = (1.0 - momentum) * run_var.w[c] + momentum * var;
    }
    return y;
}

Tensor BatchNorm::backward(const Tensor& dy) {
    const int C = channels();
    if (!train) {
        // eval mode is a fixed affine map; only the input gradient is needed
        Tensor dx(dy.rows, C);
        for (int c = 0; c < C; ++c) {
            const double inv = 1.0 / std::sqrt(run_var.w[c] + eps);
            for (int i = 0; i < dy.rows; ++i) dx.at(i, c) = dy.at(i, c) * gamma.w[c] * inv;
        }
        return dx;
    }
    const int N = last_n;
    check(dy.rows == N && dy.cols == C, "batchnorm backward: shape mismatch");
    Tensor dx(N, C);
    for (int c = 0; c < C; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int i = 0; i < N; ++i) {
            const double d = dy.at(i, c);
            sum_dy += d;
            sum_dy_xhat += d * last_xhat.at(i, c);
        }
        gamma.g[c] += sum_dy_xhat;
        beta.g[c] += sum_dy;
        const double inv = 1.0 / std::sqrt(last_var[c] + eps);
        const double k = gamma.w[c] * inv / N;
        for (int i = 0; i < N; ++i) {
            dx.at(i, c) = k * (N * dy.at(i, c) - sum_dy - last_xhat.at(i, c) * sum_dy_xhat);
        }
    }
    return dx;
}

GradCheckReport grad_check(const std::function<double(bool)>& loss,
                           const std::vector<Parameter*>& params, double tolerance,
                           double h, int min_coords, uint64_t seed) {
    for (Parameter* p : params) p->zero_grad();
    const double base = loss(true);
    if (!std::isfinite(base)) throw std::runtime_error("grad_check: non-finite loss");

    std::vector<std::vector<double>> analytic(params.size());
    for (size_t pi = 0; pi < params.size(); ++pi) analytic[pi] = params[pi]->g;

    GradCheckReport report;
    Rng rng(seed);
    // Flat directions (e.g. a conv bias feeding a batch norm) have a true
    // gradient of exactly zero; central differences there measure only
    // cancellation noise of order eps * |loss| / (2h). Coordinates where
    // both sides sit below that noise scale count as agreeing.
    const double zero_tol = 1e-6 * std::max(1.0, std::abs(base));
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Parameter* p = params[pi];
        if (p->frozen) continue;
        const int total = int(p->w.size());
        std::vector<int> coords;
        if (total <= min_coords) {
            coords.resize(total);
            for (int k = 0; k < total; ++k) coords[k] = k;
        } else {
            for (int k = 0; k < min_coords; ++k) coords.push_back(rng.uniform_int(0, total - 1));
            std::sort(coords.begin(), coords.end());
            coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
        }
        double worst = 0.0;
        for (int k : coords) {
            const double saved = p->w[k];
            p->w[k] = saved + h;
            const double fp = loss(false);
            p->w[k] = saved - h;
            const double fm = loss(false);
            p->w[k] = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw std::runtime_error("grad_check: non-finite loss during probing");
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[pi][k];
            if (std::abs(a) < zero_tol && std::abs(numeric) < zero_tol) continue;
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            worst = std::max(worst, rel);
        }
        report.per_param.emplace_back(p->name, worst);
        report.max_rel_err = std::max(report.max_rel_err, worst);
    }
    report.pass = report.max_rel_err < tolerance;
    return report;
}

} // namespace skpp
