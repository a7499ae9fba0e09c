#include "skeldiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

#include "skeldiff/error.hpp"

namespace skeldiff {

std::string schedule_kind_name(ScheduleKind k) { return k == ScheduleKind::linear ? "linear" : "cosine"; }

ScheduleKind parse_schedule_kind(const std::string& s) {
    if (s == "linear") return ScheduleKind::linear;
    if (s == "cosine") return ScheduleKind::cosine;
    fail(ErrorCategory::config, "unknown schedule '" + s + "' (expected linear|cosine)");
}

std::string sigma_kind_name(SigmaKind k) { return k == SigmaKind::beta ? "beta" : "beta_tilde"; }

SigmaKind parse_sigma_kind(const std::string& s) {
    if (s == "beta") return SigmaKind::beta;
    if (s == "beta_tilde") return SigmaKind::beta_tilde;
    fail(ErrorCategory::config, "unknown sigma kind '" + s + "' (expected beta|beta_tilde)");
}

namespace {

void fill_alpha_bars(NoiseSchedule& s) {
    s.alpha_bars.assign(static_cast<std::size_t>(s.steps) + 1, 1.0);
    for (int t = 1; t <= s.steps; ++t) {
        const auto i = static_cast<std::size_t>(t);
        s.alpha_bars[i] = s.alpha_bars[i - 1] * (1.0 - s.betas[i]);
    }
}

void check_step(const NoiseSchedule& s, int t, const char* op) {
    if (t < 1 || t > s.steps)
        fail(ErrorCategory::invalid_argument, std::string(op) + ": step " + std::to_string(t) + " outside 1.." + std::to_string(s.steps));
}

void check_same(const ad::Tensor& a, const ad::Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        fail(ErrorCategory::shape, std::string(op) + ": shapes " + ad::shape_str(a.shape()) + " and " + ad::shape_str(b.shape()) + " differ");
}

}  // namespace

double NoiseSchedule::variance(int t, SigmaKind kind) const {
    if (kind == SigmaKind::beta) return beta(t);
    return beta(t) * (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t));
}

NoiseSchedule linear_schedule(int steps, double beta_start, double beta_end) {
    if (steps < 1) fail(ErrorCategory::invalid_argument, "linear_schedule: steps must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        fail(ErrorCategory::invalid_argument, "linear_schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.kind = ScheduleKind::linear;
    s.steps = steps;
    s.betas.assign(static_cast<std::size_t>(steps) + 1, 0.0);
    for (int t = 1; t <= steps; ++t) {
        const double f = steps == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(steps - 1);
        s.betas[static_cast<std::size_t>(t)] = beta_start + f * (beta_end - beta_start);
    }
    fill_alpha_bars(s);
    return s;
}

NoiseSchedule cosine_schedule(int steps, double offset, double max_beta) {
    if (steps < 1) fail(ErrorCategory::invalid_argument, "cosine_schedule: steps must be >= 1");
    if (!(offset > 0.0)) fail(ErrorCategory::invalid_argument, "cosine_schedule: offset s must be > 0");
    auto f = [&](int t) {
        const double c = std::cos((static_cast<double>(t) / steps + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
        return c * c;
    };
    const double f0 = f(0);
    NoiseSchedule s;
    s.kind = ScheduleKind::cosine;
    s.steps = steps;
    s.betas.assign(static_cast<std::size_t>(steps) + 1, 0.0);
    for (int t = 1; t <= steps; ++t) {
        const double beta = 1.0 - (f(t) / f0) / (f(t - 1) / f0);
        s.betas[static_cast<std::size_t>(t)] = std::min(beta, max_beta);
    }
    // Rebuilt from the clipped betas so the product identity holds exactly.
    fill_alpha_bars(s);
    return s;
}

NoiseSchedule make_schedule(ScheduleKind kind, int steps) {
    return kind == ScheduleKind::linear ? linear_schedule(steps) : cosine_schedule(steps);
}

void write_schedule_csv(std::ostream& out, const NoiseSchedule& sched) {
    out << "t,beta,alpha_bar\n";
    out.precision(17);
    for (int t = 0; t <= sched.steps; ++t) out << t << ',' << sched.beta(t) << ',' << sched.alpha_bar(t) << '\n';
}

ad::Tensor q_sample(const ad::Tensor& x0, int t, const ad::Tensor& eps, const NoiseSchedule& sched) {
    check_step(sched, t, "q_sample");
    check_same(x0, eps, "q_sample");
    const double a = std::sqrt(sched.alpha_bar(t));
    const double b = std::sqrt(1.0 - sched.alpha_bar(t));
    ad::Tensor out(x0.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
    return out;
}

ad::Tensor predict_x0(const ad::Tensor& x_t, int t, const ad::Tensor& eps_hat, const NoiseSchedule& sched) {
    check_step(sched, t, "predict_x0");
    check_same(x_t, eps_hat, "predict_x0");
    const double ab = sched.alpha_bar(t);
    if (ab < 1e-12)
        fail(ErrorCategory::numeric, "predict_x0: alpha_bar(" + std::to_string(t) + ") = " + std::to_string(ab) + " is below 1e-12");
    const double a = std::sqrt(ab);
    const double b = std::sqrt(1.0 - ab);
    ad::Tensor out(x_t.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (x_t[i] - b * eps_hat[i]) / a;
    return out;
}

ad::Tensor posterior_mean(const ad::Tensor& x_t, int t, const ad::Tensor& eps_hat, const NoiseSchedule& sched) {
    check_step(sched, t, "posterior_mean");
    check_same(x_t, eps_hat, "posterior_mean");
    const double beta = sched.beta(t);
    const double coef = beta / std::sqrt(1.0 - sched.alpha_bar(t));
    const double inv = 1.0 / std::sqrt(1.0 - beta);
    ad::Tensor out(x_t.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (x_t[i] - coef * eps_hat[i]) * inv;
    return out;
}

void X0Projection::apply(ad::Tensor& x0) const {
    if (identity()) return;
    mask(x0);
    if (clip > 0.0)
        for (double& v : x0.values()) v = std::clamp(v, -clip, clip);
}

void X0Projection::mask(ad::Tensor& x) const {
    if (rows == 0) return;
    const auto& sh = x.shape();
    if (sh.size() != 4 || row0 + rows > sh[2] || col0 + cols > sh[3])
        fail(ErrorCategory::shape, "X0Projection: content block does not fit " + ad::shape_str(sh));
    const std::size_t h = sh[2], w = sh[3];
    for (std::size_t p = 0; p < sh[0] * sh[1]; ++p)
        for (std::size_t r = 0; r < h; ++r) {
            double* row = x.data() + (p * h + r) * w;
            const bool in_rows = r >= row0 && r < row0 + rows;
            for (std::size_t c = 0; c < w; ++c)
                if (!in_rows || c < col0 || c >= col0 + cols) row[c] = 0.0;
        }
}

ad::Tensor posterior_mean_projected(const ad::Tensor& x_t, int t, const ad::Tensor& eps_hat, const NoiseSchedule& sched,
                                    const X0Projection& proj) {
    if (proj.identity()) return posterior_mean(x_t, t, eps_hat, sched);
    ad::Tensor x0 = predict_x0(x_t, t, eps_hat, sched);
    proj.apply(x0);
    const double ab = sched.alpha_bar(t), ab_prev = sched.alpha_bar(t - 1), beta = sched.beta(t);
    const double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
    const double c1 = std::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab);
    for (std::size_t i = 0; i < x0.size(); ++i) x0[i] = c0 * x0[i] + c1 * x_t[i];
    return x0;
}

void add_chain_noise(ad::Tensor& x, double sigma, std::span<Rng> rngs) {
    if (sigma == 0.0) return;
    if (rngs.empty() || x.size() % rngs.size() != 0)
        fail(ErrorCategory::shape, "add_chain_noise: " + std::to_string(x.size()) + " values cannot be split over " +
                                       std::to_string(rngs.size()) + " chains");
    const std::size_t per = x.size() / rngs.size();
    for (std::size_t c = 0; c < rngs.size(); ++c)
        for (std::size_t i = 0; i < per; ++i) x[c * per + i] += sigma * rngs[c].normal();
}

ad::Tensor chain_normal(const ad::Shape& shape, std::span<Rng> rngs) {
    ad::Tensor x(shape, 0.0);
    if (rngs.empty() || x.size() % rngs.size() != 0)
        fail(ErrorCategory::shape, "chain_normal: shape " + ad::shape_str(shape) + " cannot be split over " +
                                       std::to_string(rngs.size()) + " chains");
    const std::size_t per = x.size() / rngs.size();
    for (std::size_t c = 0; c < rngs.size(); ++c) rngs[c].fill_normal(x.values().subspan(c * per, per));
    return x;
}

ad::Tensor p_sample(const ad::Tensor& x_t, int t, const ad::Tensor& eps_hat, const NoiseSchedule& sched,
                    SigmaKind sigma_kind, std::span<Rng> rngs, const X0Projection& proj) {
    check_step(sched, t, "p_sample");
    ad::Tensor out = posterior_mean_projected(x_t, t, eps_hat, sched, proj);
    if (t > 1) add_chain_noise(out, std::sqrt(sched.variance(t, sigma_kind)), rngs);
    return out;
}

ad::Tensor p_sample(const ad::Tensor& x_t, int t, const ad::Tensor& eps_hat, const NoiseSchedule& sched,
                    SigmaKind sigma_kind, Rng& rng, const X0Projection& proj) {
    return p_sample(x_t, t, eps_hat, sched, sigma_kind, std::span<Rng>(&rng, 1), proj);
}

ad::Tensor sample_loop(const EpsModel& model, const NoiseSchedule& sched, SigmaKind sigma_kind,
                       std::span<Rng> rngs, const ad::Shape& shape, const X0Projection& proj) {
    if (shape.empty() || shape[0] != rngs.size())
        fail(ErrorCategory::shape, "sample_loop: leading extent of " + ad::shape_str(shape) + " must equal the chain count " +
                                       std::to_string(rngs.size()));
    ad::Tensor x = chain_normal(shape, rngs);
    for (int t = sched.steps; t >= 1; --t) {
        const ad::Tensor eps = model(x, t);
        x = p_sample(x, t, eps, sched, sigma_kind, rngs, proj);
    }
    return x;
}

}  // namespace skeldiff
