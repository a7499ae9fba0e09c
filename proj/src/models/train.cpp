#include "skeldiff/models/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "skeldiff/ad/adamw.hpp"
#include "skeldiff/error.hpp"

namespace skeldiff::models {

void TrainConfig::validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) fail(ErrorCategory::config, "train: lr must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        fail(ErrorCategory::config, "train: betas must be in [0, 1)");
    if (!(eps > 0.0) || weight_decay < 0.0) fail(ErrorCategory::config, "train: eps must be > 0 and weight_decay >= 0");
    if (batch_size <= 0 || iterations < 0 || checkpoint_every < 0 || log_every <= 0)
        fail(ErrorCategory::config, "train: batch_size and log_every must be positive, counts non-negative");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"lr", c.lr},
                       {"beta1", c.beta1},
                       {"beta2", c.beta2},
                       {"eps", c.eps},
                       {"weight_decay", c.weight_decay},
                       {"batch_size", c.batch_size},
                       {"iterations", c.iterations},
                       {"seed", c.seed},
                       {"checkpoint_every", c.checkpoint_every},
                       {"log_every", c.log_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    TrainConfig d;
    c.lr = j.value("lr", d.lr);
    c.beta1 = j.value("beta1", d.beta1);
    c.beta2 = j.value("beta2", d.beta2);
    c.eps = j.value("eps", d.eps);
    c.weight_decay = j.value("weight_decay", d.weight_decay);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.iterations = j.value("iterations", d.iterations);
    c.seed = j.value("seed", d.seed);
    c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
    c.log_every = j.value("log_every", d.log_every);
}

ad::Tensor images_tensor(const Dataset& ds, const NormParams& norm) {
    constexpr std::size_t pix = 3 * kImageSize * kImageSize;
    ad::Tensor out({ds.size(), 3, kImageSize, kImageSize}, 0.0);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& seq = ds.items[i];
        const auto chw = to_chw(encode(seq.num_frames == seq.num_joints ? seq : resample_time(seq, seq.num_joints), norm));
        std::copy(chw.begin(), chw.end(), out.data() + i * pix);
    }
    return out;
}

std::vector<std::size_t> labels_of(const Dataset& ds) {
    std::vector<std::size_t> y;
    y.reserve(ds.size());
    for (const auto& it : ds.items) y.push_back(static_cast<std::size_t>(it.label));
    return y;
}

ad::Tensor gather(const ad::Tensor& x, std::span<const std::size_t> rows) {
    if (x.rank() == 0) fail(ErrorCategory::shape, "gather: scalar input");
    ad::Shape s = x.shape();
    const std::size_t n = s[0];
    const std::size_t per = n == 0 ? 0 : x.size() / n;
    s[0] = rows.size();
    ad::Tensor out(s, 0.0);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= n) fail(ErrorCategory::invalid_argument, "gather: row " + std::to_string(rows[r]) + " out of range");
        std::copy_n(x.data() + rows[r] * per, per, out.data() + r * per);
    }
    return out;
}

namespace {

ad::AdamWHyper hyper_of(const TrainConfig& c) { return {c.lr, c.beta1, c.beta2, c.eps, c.weight_decay}; }

}  // namespace

std::vector<LossRow> train_denoiser(Denoiser& model, const ad::Tensor& images, const NoiseSchedule& sched,
                                    const TrainConfig& cfg, const TrainHooks& hooks) {
    cfg.validate();
    if (images.rank() != 4 || images.shape()[0] == 0) fail(ErrorCategory::invalid_argument, "train_denoiser: empty dataset");
    const std::size_t n = images.shape()[0];
    const auto bs = static_cast<std::size_t>(cfg.batch_size);

    ad::AdamW opt(model.params().values(), hyper_of(cfg));
    Rng rng(derive_seed(cfg.seed, 0x64656e6f));
    std::vector<LossRow> log;
    std::vector<std::size_t> rows(bs);
    std::vector<int> steps(bs);
    for (int it = 0; it < cfg.iterations; ++it) {
        for (auto& r : rows) r = rng.index(n);
        for (auto& t : steps) t = static_cast<int>(rng.integer(1, sched.steps));
        const ad::Tensor x0 = gather(images, rows);
        ad::Tensor eps(x0.shape(), 0.0);
        rng.fill_normal(eps.values());
        ad::Tensor xt(x0.shape(), 0.0);
        const std::size_t per = x0.size() / bs;
        for (std::size_t b = 0; b < bs; ++b) {
            const double ab = sched.alpha_bar(steps[b]);
            const double a = std::sqrt(ab), s = std::sqrt(1.0 - ab);
            for (std::size_t i = b * per; i < (b + 1) * per; ++i) xt[i] = a * x0[i] + s * eps[i];
        }

        double loss_value = 0.0;
        try {
            ad::Value loss = ad::mse_loss(model.forward(ad::Value::constant(std::move(xt)), steps), ad::Value::constant(eps));
            loss_value = loss.item();
            loss.backward();
        } catch (const Error& e) {
            if (e.category() != ErrorCategory::numeric) throw;
            fail(ErrorCategory::numeric, "train_denoiser: non-finite value at step " + std::to_string(it + 1) + " (lr " +
                                             std::to_string(cfg.lr) + "): " + e.what());
        }
        opt.step();
        model.params().zero_grad();

        const int step = it + 1;
        if (it % cfg.log_every == 0 || step == cfg.iterations) {
            LossRow row{step, loss_value, cfg.lr};
            log.push_back(row);
            if (hooks.on_log) hooks.on_log(row);
        }
        if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && hooks.on_checkpoint) hooks.on_checkpoint(step);
    }
    return log;
}

ad::Tensor predict_logits(const STTrans& model, const ad::Tensor& images, std::size_t chunk) {
    ad::NoGradGuard guard;
    const std::size_t n = images.rank() == 4 ? images.shape()[0] : 0;
    const auto k = static_cast<std::size_t>(model.config().num_classes);
    ad::Tensor out({n, k}, 0.0);
    std::vector<std::size_t> rows;
    for (std::size_t start = 0; start < n; start += chunk) {
        rows.clear();
        for (std::size_t r = start; r < std::min(n, start + chunk); ++r) rows.push_back(r);
        const ad::Tensor lg = model.logits(ad::Value::constant(gather(images, rows))).data();
        std::copy(lg.data(), lg.data() + lg.size(), out.data() + start * k);
    }
    return out;
}

std::vector<std::size_t> argmax_rows(const ad::Tensor& logits) {
    if (logits.rank() != 2) fail(ErrorCategory::shape, "argmax_rows: expected (N, K), got " + ad::shape_str(logits.shape()));
    const std::size_t n = logits.shape()[0], k = logits.shape()[1];
    std::vector<std::size_t> out(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = logits.data() + i * k;
        out[i] = static_cast<std::size_t>(std::max_element(row, row + k) - row);  // first maximum wins
    }
    return out;
}

std::vector<EpochRecord> train_classifier(STTrans& model, const ad::Tensor& images, std::span<const std::size_t> labels,
                                          const ad::Tensor& eval_images, std::span<const std::size_t> eval_labels,
                                          const TrainConfig& cfg, const TrainHooks& hooks) {
    cfg.validate();
    if (images.rank() != 4 || images.shape()[0] == 0) fail(ErrorCategory::invalid_argument, "train_classifier: empty dataset");
    const std::size_t n = images.shape()[0];
    if (labels.size() != n) fail(ErrorCategory::shape, "train_classifier: label count does not match image count");
    const std::size_t n_eval = eval_images.rank() == 4 ? eval_images.shape()[0] : 0;
    if (eval_labels.size() != n_eval) fail(ErrorCategory::shape, "train_classifier: eval label count does not match");

    ad::AdamW opt(model.params().values(), hyper_of(cfg));
    Rng rng(derive_seed(cfg.seed, 0x636c6173));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = n;  // forces a shuffle before the first batch

    std::vector<EpochRecord> epochs;
    std::size_t correct = 0, seen = 0;
    double loss_sum = 0.0;
    int batches = 0;
    auto close_epoch = [&] {
        EpochRecord rec;
        rec.epoch = static_cast<int>(epochs.size()) + 1;
        rec.train_accuracy = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
        rec.mean_loss = batches ? loss_sum / batches : 0.0;
        if (n_eval > 0) {
            const auto pred = argmax_rows(predict_logits(model, eval_images));
            std::size_t ok = 0;
            for (std::size_t i = 0; i < n_eval; ++i) ok += pred[i] == eval_labels[i];
            rec.eval_accuracy = static_cast<double>(ok) / static_cast<double>(n_eval);
        }
        epochs.push_back(rec);
        if (hooks.on_epoch) hooks.on_epoch(rec);
        correct = seen = 0;
        loss_sum = 0.0;
        batches = 0;
    };

    std::vector<std::size_t> rows, ys;
    for (int it = 0; it < cfg.iterations; ++it) {
        if (cursor >= n) {
            std::shuffle(order.begin(), order.end(), rng.engine());
            cursor = 0;
        }
        rows.assign(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                    order.begin() + static_cast<std::ptrdiff_t>(std::min(n, cursor + static_cast<std::size_t>(cfg.batch_size))));
        cursor += rows.size();
        ys.clear();
        for (std::size_t r : rows) ys.push_back(labels[r]);

        double loss_value = 0.0;
        try {
            const ad::Value lg = model.logits(ad::Value::constant(gather(images, rows)));
            const auto pred = argmax_rows(lg.data());
            for (std::size_t i = 0; i < ys.size(); ++i) correct += pred[i] == ys[i];
            seen += ys.size();
            ad::Value loss = cross_entropy(lg, ys);
            loss_value = loss.item();
            loss.backward();
        } catch (const Error& e) {
            if (e.category() != ErrorCategory::numeric) throw;
            fail(ErrorCategory::numeric, "train_classifier: non-finite value at step " + std::to_string(it + 1) + ": " + e.what());
        }
        opt.step();
        model.params().zero_grad();
        loss_sum += loss_value;
        ++batches;

        const int step = it + 1;
        if ((it % cfg.log_every == 0 || step == cfg.iterations) && hooks.on_log) hooks.on_log({step, loss_value, cfg.lr});
        if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && hooks.on_checkpoint) hooks.on_checkpoint(step);
        if (cursor >= n || step == cfg.iterations) close_epoch();
    }
    return epochs;
}

}  // namespace skeldiff::models
