#include "aedet/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "aedet/common.hpp"
#include "aedet/csv.hpp"
#include "aedet/serialize.hpp"

namespace aedet {

const char* attack_kind_name(AttackKind k) {
    switch (k) {
        case AttackKind::Fgsm: return "fgsm";
        case AttackKind::Bim: return "bim";
        case AttackKind::Pgd: return "pgd";
        case AttackKind::DeepFool: return "deepfool";
        case AttackKind::Cw: return "cw";
    }
    return "?";
}

AttackKind attack_kind_from(const std::string& s) {
    if (s == "fgsm") return AttackKind::Fgsm;
    if (s == "bim") return AttackKind::Bim;
    if (s == "pgd") return AttackKind::Pgd;
    if (s == "deepfool") return AttackKind::DeepFool;
    if (s == "cw") return AttackKind::Cw;
    throw parameter_error("unknown attack kind '" + s + "'");
}

void AttackSpec::validate() const {
    if (epsilon < 0) throw parameter_error("attack: epsilon must be nonnegative");
    if (steps < 1) throw parameter_error("attack: steps must be positive");
    if (kind == AttackKind::Bim || kind == AttackKind::Pgd) {
        const float ss = step_size > 0 ? step_size : default_attack_spec(kind, epsilon).step_size;
        if (ss * static_cast<float>(steps) < epsilon)
            throw parameter_error("attack: step_size * steps must reach epsilon");
    }
    if (kind == AttackKind::Cw && cw_const <= 0)
        throw parameter_error("attack: cw_const must be positive");
}

AttackSpec default_attack_spec(AttackKind kind, float epsilon) {
    AttackSpec s;
    s.kind = kind;
    s.epsilon = epsilon;
    switch (kind) {
        case AttackKind::Fgsm:
            s.steps = 1;
            s.step_size = epsilon;
            break;
        case AttackKind::Bim:
            s.steps = 10;
            s.step_size = epsilon / 4.0f;
            break;
        case AttackKind::Pgd:
            s.steps = 40;
            s.step_size = 2.5f * epsilon / 40.0f;
            break;
        case AttackKind::DeepFool:
            s.steps = 50;
            break;
        case AttackKind::Cw:
            s.steps = 60;
            s.cw_const = 1.0f;
            s.cw_lr = 0.02f;
            break;
    }
    return s;
}

namespace {

float sign0(float v) { return v > 0 ? 1.0f : (v < 0 ? -1.0f : 0.0f); }

// Input gradient of the cross-entropy loss at x.
std::vector<float> input_gradient(const TrainedNetwork& net, const Tensor& x,
                                  const std::vector<int>& y) {
    Tape tape;
    Tensor xt = x;
    tape.watch(xt);
    Tensor logits = network_forward(net.config, net.params, xt, &tape);
    Tensor loss = cross_entropy(&tape, logits, y);
    tape.backward(loss);
    std::vector<float> g = tape.grad(xt);
    for (float v : g)
        if (!std::isfinite(v)) throw attack_error("attack: non-finite input gradient");
    return g;
}

AdversarialBatch finalize(const TrainedNetwork& net, const Tensor& originals,
                          Tensor perturbed, const std::vector<int>& y) {
    AdversarialBatch out;
    out.originals = originals;
    out.perturbed = std::move(perturbed);
    out.true_labels = y;
    out.pred_clean = predict(net, originals);
    out.pred_adv = predict(net, out.perturbed);
    const size_t n = y.size();
    const size_t d = originals.numel() / n;
    out.success.resize(n);
    out.linf.resize(n);
    out.l2.resize(n);
    for (size_t i = 0; i < n; ++i) {
        out.success[i] = out.pred_adv[i] != y[i];
        float li = 0;
        double l2 = 0;
        for (size_t j = 0; j < d; ++j) {
            const float dv = out.perturbed.data[i * d + j] - originals.data[i * d + j];
            li = std::max(li, std::abs(dv));
            l2 += static_cast<double>(dv) * dv;
        }
        out.linf[i] = li;
        out.l2[i] = static_cast<float>(std::sqrt(l2));
    }
    return out;
}

}  // namespace

AdversarialBatch iterative_linf(const TrainedNetwork& net, const Tensor& x,
                                const std::vector<int>& y, float epsilon, int steps,
                                float step_size, bool random_start, uint64_t seed) {
    if (epsilon < 0) throw parameter_error("iterative_linf: epsilon must be nonnegative");
    if (steps < 1) throw parameter_error("iterative_linf: steps must be positive");
    if (step_size * static_cast<float>(steps) < epsilon)
        throw parameter_error("iterative_linf: step_size * steps must reach epsilon");

    Tensor cur = x;
    if (random_start && epsilon > 0) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<float> u(-epsilon, epsilon);
        for (size_t i = 0; i < cur.numel(); ++i)
            cur.data[i] = std::clamp(cur.data[i] + u(rng), 0.0f, 1.0f);
    }
    for (int step = 0; step < steps; ++step) {
        const auto g = input_gradient(net, cur, y);
        for (size_t i = 0; i < cur.numel(); ++i) {
            float v = cur.data[i] + step_size * sign0(g[i]);
            v = std::clamp(v, x.data[i] - epsilon, x.data[i] + epsilon);
            cur.data[i] = std::clamp(v, 0.0f, 1.0f);
        }
    }
    return finalize(net, x, std::move(cur), y);
}

AdversarialBatch fgsm(const TrainedNetwork& net, const Tensor& x, const std::vector<int>& y,
                      float epsilon) {
    // one projected sign step; shares the exact code path with BIM so the
    // two are bit-identical by construction
    return iterative_linf(net, x, y, epsilon, 1, epsilon, false);
}

AdversarialBatch deepfool(const TrainedNetwork& net, const Tensor& x, const std::vector<int>& y,
                          int steps_max) {
    if (net.config.num_classes < 2) throw parameter_error("deepfool: need at least 2 classes");
    if (steps_max < 1) throw parameter_error("deepfool: steps_max must be positive");
    const int K = net.config.num_classes;
    const size_t n = y.size();
    const size_t d = x.numel() / n;
    Tensor perturbed = x;

    for (size_t s = 0; s < n; ++s) {
        Tensor xi = Tensor::zeros({1, x.dim(1), x.dim(2), x.dim(3)});
        std::copy_n(x.data.begin() + s * d, d, xi.data.begin());
        std::vector<float> delta(d, 0.0f);
        const int orig = y[s];

        for (int it = 0; it < steps_max; ++it) {
            // linearize at the box-projected point: clamping is part of the
            // domain, so an off-box crossing must not count as a flip
            Tensor cur = xi;
            for (size_t j = 0; j < d; ++j)
                cur.data[j] = std::clamp(cur.data[j] + delta[j], 0.0f, 1.0f);

            Tape tape;
            tape.watch(cur);
            Tensor logits = network_forward(net.config, net.params, cur, &tape);
            if (argmax_rows(logits)[0] != orig) break;

            // gradient of every class logit at the current point
            std::vector<std::vector<float>> grads(K);
            for (int k = 0; k < K; ++k) {
                Tensor zk = pick(&tape, logits, static_cast<size_t>(k));
                tape.backward(zk);
                grads[k] = tape.has_grad(cur) ? tape.grad(cur) : std::vector<float>(d, 0.0f);
            }

            // nearest linearized boundary
            double best_dist = 1e300;
            int best_k = -1;
            for (int k = 0; k < K; ++k) {
                if (k == orig) continue;
                double wn2 = 0;
                for (size_t j = 0; j < d; ++j) {
                    const double w = grads[k][j] - grads[orig][j];
                    wn2 += w * w;
                }
                if (wn2 < 1e-20) continue;
                const double f = logits.data[k] - logits.data[orig];
                const double dist = std::abs(f) / std::sqrt(wn2);
                if (dist < best_dist) {
                    best_dist = dist;
                    best_k = k;
                }
            }
            if (best_k < 0) break;  // flat landscape, no boundary to project onto

            double wn2 = 0;
            for (size_t j = 0; j < d; ++j) {
                const double w = grads[best_k][j] - grads[orig][j];
                wn2 += w * w;
            }
            const double f = logits.data[best_k] - logits.data[orig];
            const double coef = (std::abs(f) + 1e-6) / wn2;
            for (size_t j = 0; j < d; ++j)
                delta[j] += static_cast<float>(coef * (grads[best_k][j] - grads[orig][j]));
        }

        for (size_t j = 0; j < d; ++j) {
            const float v = xi.data[j] + 1.02f * delta[j];
            perturbed.data[s * d + j] = std::clamp(v, 0.0f, 1.0f);
        }
    }
    return finalize(net, x, std::move(perturbed), y);
}

AdversarialBatch cw_l2(const TrainedNetwork& net, const Tensor& x, const std::vector<int>& y,
                       float c, float kappa, int steps, float lr) {
    if (steps < 1) throw parameter_error("cw_l2: steps must be positive");
    if (c <= 0) throw parameter_error("cw_l2: c must be positive");
    const size_t n = y.size();
    const size_t d = x.numel() / n;

    // tanh-space variable: x = (tanh(w) + 1) / 2
    Tensor w = x;
    for (auto& v : w.data) {
        const float xv = std::clamp(v, 1e-6f, 1.0f - 1e-6f);
        v = std::atanh(2.0f * xv - 1.0f);
    }

    Tensor best = x;
    std::vector<float> best_l2(n, std::numeric_limits<float>::infinity());
    std::vector<char> found(n, 0);
    Optimizer<float> opt(OptimizerKind::Adam, lr);

    for (int step = 0; step < steps; ++step) {
        Tape tape;
        tape.watch(w);
        Tensor x_adv = scale(&tape, add(&tape, tanh_op(&tape, w), Tensor::full(x.shape, 1.0f)),
                             0.5f);
        Tensor delta = sub(&tape, x_adv, x);
        Tensor logits = network_forward(net.config, net.params, x_adv, &tape);
        Tensor loss = add(&tape, sum_squares(&tape, delta),
                          scale(&tape, cw_margin(&tape, logits, y, kappa), c));
        tape.backward(loss);

        // track per-sample best successful iterate
        const auto preds = argmax_rows(logits);
        for (size_t i = 0; i < n; ++i) {
            if (preds[i] == y[i]) continue;
            double l2 = 0;
            for (size_t j = 0; j < d; ++j) {
                const double dv = x_adv.data[i * d + j] - x.data[i * d + j];
                l2 += dv * dv;
            }
            const float l2f = static_cast<float>(std::sqrt(l2));
            if (l2f < best_l2[i]) {
                best_l2[i] = l2f;
                found[i] = 1;
                std::copy_n(x_adv.data.begin() + i * d, d, best.data.begin() + i * d);
            }
        }

        const auto& g = tape.grad(w);
        w.node = -1;
        w.requires_grad = false;
        std::vector<Tensor*> ps{&w};
        std::vector<const std::vector<float>*> gs{&g};
        opt.step(ps, gs);
    }

    // samples never fooled keep the last iterate
    Tensor last = w;
    for (auto& v : last.data) v = (std::tanh(v) + 1.0f) * 0.5f;
    for (size_t i = 0; i < n; ++i)
        if (!found[i]) std::copy_n(last.data.begin() + i * d, d, best.data.begin() + i * d);
    for (auto& v : best.data) v = std::clamp(v, 0.0f, 1.0f);
    return finalize(net, x, std::move(best), y);
}

AdversarialBatch run_attack(const TrainedNetwork& net, const Tensor& x, const std::vector<int>& y,
                            const AttackSpec& spec) {
    spec.validate();
    const float ss = spec.step_size > 0
                         ? spec.step_size
                         : default_attack_spec(spec.kind, spec.epsilon).step_size;
    switch (spec.kind) {
        case AttackKind::Fgsm:
            return fgsm(net, x, y, spec.epsilon);
        case AttackKind::Bim:
            return iterative_linf(net, x, y, spec.epsilon, spec.steps, ss, false, spec.seed);
        case AttackKind::Pgd:
            return iterative_linf(net, x, y, spec.epsilon, spec.steps, ss, true, spec.seed);
        case AttackKind::DeepFool:
            return deepfool(net, x, y, spec.steps);
        case AttackKind::Cw:
            return cw_l2(net, x, y, spec.cw_const, spec.cw_confidence, spec.steps, spec.cw_lr);
    }
    throw parameter_error("run_attack: unknown kind");
}

std::vector<Tensor> epsilon_sweep(const TrainedNetwork& net, const Tensor& x,
                                  const std::vector<int>& y, AttackKind kind, float eps_max,
                                  int grid_points) {
    if (grid_points < 2) throw parameter_error("epsilon_sweep: need at least 2 grid points");
    if (kind == AttackKind::Cw || kind == AttackKind::DeepFool)
        throw parameter_error("epsilon_sweep: only eps-bounded attack kinds are supported");
    std::vector<Tensor> out;
    out.reserve(grid_points);
    for (int i = 0; i < grid_points; ++i) {
        const float eps = 2.0f * eps_max * static_cast<float>(i) / (grid_points - 1);
        if (eps == 0.0f) {
            out.push_back(x);  // gamma(0) is the clean sample
            continue;
        }
        AttackSpec spec = default_attack_spec(kind, eps);
        out.push_back(run_attack(net, x, y, spec).perturbed);
    }
    return out;
}

void save_adversarial_batch(const std::string& aedm_path, const std::string& manifest_csv_path,
                            const AdversarialBatch& batch) {
    write_aedm(aedm_path, {{"originals", batch.originals}, {"perturbed", batch.perturbed}});
    CsvTable t;
    t.header = {"sample_id", "true_label", "pred_clean", "pred_adv", "success", "linf", "l2"};
    for (size_t i = 0; i < batch.size(); ++i)
        t.rows.push_back({std::to_string(i), std::to_string(batch.true_labels[i]),
                          std::to_string(batch.pred_clean[i]), std::to_string(batch.pred_adv[i]),
                          std::to_string(static_cast<int>(batch.success[i])),
                          csv_float(batch.linf[i]), csv_float(batch.l2[i])});
    write_csv(manifest_csv_path, t);
}

AdversarialBatch load_adversarial_batch(const std::string& aedm_path,
                                        const std::string& manifest_csv_path) {
    AdversarialBatch out;
    for (auto& [name, t] : read_aedm(aedm_path)) {
        if (name == "originals") out.originals = std::move(t);
        else if (name == "perturbed") out.perturbed = std::move(t);
    }
    const auto t = read_csv(manifest_csv_path);
    const int cy = t.column("true_label"), cc = t.column("pred_clean"), ca = t.column("pred_adv");
    const int cs = t.column("success"), cl = t.column("linf"), c2 = t.column("l2");
    for (const auto& r : t.rows) {
        out.true_labels.push_back(std::stoi(r[cy]));
        out.pred_clean.push_back(std::stoi(r[cc]));
        out.pred_adv.push_back(std::stoi(r[ca]));
        out.success.push_back(static_cast<char>(std::stoi(r[cs])));
        out.linf.push_back(std::stof(r[cl]));
        out.l2.push_back(std::stof(r[c2]));
    }
    return out;
}

}  // namespace aedet
