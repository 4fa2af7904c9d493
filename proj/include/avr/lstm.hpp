#pragma once

// Stacked LSTM over 11-frame snippets with a 2-way softmax head: batched
// forward/backward (backpropagation through time), SGD with momentum,
// pocket-rule training, per-class evaluation, finite-difference gradient
// checking, and the PLSM checkpoint.
//
// Shapes: per layer W is 4H x (in + H) with row blocks i, f, g, o and the
// input columns before the recurrent ones; b is 4H. The head is 2 x H plus 2.
// Activations are column-per-sample; the input for a batch of B snippets is
// D x (T*B) with column t*B + b.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "avr/annotations.hpp"
#include "avr/binary_io.hpp"
#include "avr/error.hpp"
#include "avr/feature_assembly.hpp"
#include "avr/rng.hpp"

namespace avr {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr std::array<char, 4> kGateNames{'i', 'f', 'g', 'o'};
inline constexpr int kNumBehaviors = 2;

struct LstmLayout {
    int num_layers = 2;
    int hidden_size = 256;
    int input_width = 2104;

    void validate() const {
        if (num_layers < 1) throw Error(ErrorKind::config, "num_layers must be >= 1");
        if (hidden_size < 1) throw Error(ErrorKind::config, "hidden_size must be >= 1");
        if (input_width < 1) throw Error(ErrorKind::config, "input_width must be >= 1");
    }

    int layer_input(int l) const { return l == 0 ? input_width : hidden_size; }

    /// Row name in comparison tables, e.g. "Two layers with 256".
    std::string name() const {
        static const char* words[] = {"Zero", "One", "Two", "Three", "Four"};
        const std::string count = num_layers < 5 ? words[num_layers] : std::to_string(num_layers);
        return count + (num_layers == 1 ? " layer" : " layers") + " with " + std::to_string(hidden_size);
    }

    bool operator==(const LstmLayout&) const = default;
};

struct LstmLayer {
    MatrixXd W;  // 4H x (in + H)
    VectorXd b;  // 4H
};

/// Parameters, and also the container for gradients and velocities.
struct LstmModel {
    LstmLayout layout;
    std::vector<LstmLayer> layers;
    MatrixXd head_w;  // 2 x H
    VectorXd head_b;  // 2

    static LstmModel zeros(const LstmLayout& layout) {
        layout.validate();
        LstmModel m;
        m.layout = layout;
        const int H = layout.hidden_size;
        for (int l = 0; l < layout.num_layers; ++l)
            m.layers.push_back({MatrixXd::Zero(4 * H, layout.layer_input(l) + H), VectorXd::Zero(4 * H)});
        m.head_w = MatrixXd::Zero(kNumBehaviors, H);
        m.head_b = VectorXd::Zero(kNumBehaviors);
        return m;
    }

    /// Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero except
    /// the forget gate (+1). Draw order follows the checkpoint order.
    static LstmModel initialize(const LstmLayout& layout, Rng& rng) {
        LstmModel m = zeros(layout);
        const int H = layout.hidden_size;
        for (auto& layer : m.layers) {
            const double r = 1.0 / std::sqrt(static_cast<double>(layer.W.cols()));
            for (Eigen::Index i = 0; i < layer.W.rows(); ++i)
                for (Eigen::Index j = 0; j < layer.W.cols(); ++j) layer.W(i, j) = rng.uniform(-r, r);
            layer.b.segment(H, H).setOnes();
        }
        const double r = 1.0 / std::sqrt(static_cast<double>(H));
        for (Eigen::Index i = 0; i < m.head_w.rows(); ++i)
            for (Eigen::Index j = 0; j < m.head_w.cols(); ++j) m.head_w(i, j) = rng.uniform(-r, r);
        return m;
    }

    std::size_t parameter_count() const {
        std::size_t n = static_cast<std::size_t>(head_w.size() + head_b.size());
        for (const auto& l : layers) n += static_cast<std::size_t>(l.W.size() + l.b.size());
        return n;
    }

    bool all_finite() const {
        for (const auto& l : layers)
            if (!l.W.allFinite() || !l.b.allFinite()) return false;
        return head_w.allFinite() && head_b.allFinite();
    }

    bool operator==(const LstmModel& o) const {
        if (layout != o.layout || head_w != o.head_w || head_b != o.head_b) return false;
        for (std::size_t l = 0; l < layers.size(); ++l)
            if (layers[l].W != o.layers[l].W || layers[l].b != o.layers[l].b) return false;
        return true;
    }
};

/// Visits every scalar in checkpoint order: per layer the i, f, g, o weight
/// blocks (each row-major), then the i, f, g, o bias blocks; then the head
/// weight (row-major) and bias. `fn(tensor_name, value_ref)`.
template <typename Model, typename Fn>
void visit_parameters(Model& m, Fn&& fn) {
    const int H = m.layout.hidden_size;
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        auto& layer = m.layers[l];
        const std::string prefix = "layer" + std::to_string(l) + ".";
        for (int k = 0; k < 4; ++k) {
            const std::string name = prefix + "W_" + kGateNames[k];
            for (int r = k * H; r < (k + 1) * H; ++r)
                for (Eigen::Index c = 0; c < layer.W.cols(); ++c) fn(name, layer.W(r, c));
        }
        for (int k = 0; k < 4; ++k) {
            const std::string name = prefix + "b_" + kGateNames[k];
            for (int r = k * H; r < (k + 1) * H; ++r) fn(name, layer.b(r));
        }
    }
    for (Eigen::Index r = 0; r < m.head_w.rows(); ++r)
        for (Eigen::Index c = 0; c < m.head_w.cols(); ++c) fn(std::string("head.W"), m.head_w(r, c));
    for (Eigen::Index r = 0; r < m.head_b.size(); ++r) fn(std::string("head.b"), m.head_b(r));
}

// ---------------------------------------------------------------------------
// Forward

/// Activations kept for backpropagation; indexed [layer][step].
struct LstmCache {
    LstmLayout layout;
    int batch = 0;
    int steps = 0;
    MatrixXd x;                                  // D x (T*B)
    std::vector<std::vector<MatrixXd>> gates;    // 4H x B, after the nonlinearity
    std::vector<std::vector<MatrixXd>> cell;     // H x B
    std::vector<std::vector<MatrixXd>> tanh_cell;
    std::vector<std::vector<MatrixXd>> hidden;

    const MatrixXd& final_hidden() const { return hidden.back().back(); }
};

namespace lstm_detail {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline void check_finite(const MatrixXd& m, int layer, int step, const char* what) {
    if (!m.allFinite())
        throw Error(ErrorKind::numeric, std::string("non-finite ") + what + " at layer " + std::to_string(layer) +
                                            ", step " + std::to_string(step));
}

}  // namespace lstm_detail

/// Runs the stacked recurrence from zero states. `x` is D x (steps*batch).
inline LstmCache lstm_forward(const LstmModel& m, MatrixXd x, int batch) {
    using lstm_detail::sigmoid;
    const auto& L = m.layout;
    if (x.rows() != L.input_width)
        throw Error(ErrorKind::shape, "input width " + std::to_string(x.rows()) + " != model input width " +
                                          std::to_string(L.input_width));
    if (batch < 1 || x.cols() % batch) throw Error(ErrorKind::shape, "input columns not a multiple of the batch");
    const int H = L.hidden_size, T = static_cast<int>(x.cols() / batch);

    LstmCache c;
    c.layout = L;
    c.batch = batch;
    c.steps = T;
    c.x = std::move(x);
    c.gates.resize(L.num_layers);
    c.cell.resize(L.num_layers);
    c.tanh_cell.resize(L.num_layers);
    c.hidden.resize(L.num_layers);

    for (int l = 0; l < L.num_layers; ++l) {
        const auto& W = m.layers[l].W;
        const int in = L.layer_input(l);
        const auto Wx = W.leftCols(in);
        const auto Wh = W.rightCols(H);
        // Input projection for all steps at once.
        MatrixXd zx;
        if (l == 0) {
            zx.noalias() = Wx * c.x;
        } else {
            MatrixXd below(H, static_cast<Eigen::Index>(T) * batch);
            for (int t = 0; t < T; ++t) below.middleCols(static_cast<Eigen::Index>(t) * batch, batch) = c.hidden[l - 1][t];
            zx.noalias() = Wx * below;
        }
        MatrixXd h_prev = MatrixXd::Zero(H, batch), c_prev = MatrixXd::Zero(H, batch);
        for (int t = 0; t < T; ++t) {
            MatrixXd z = zx.middleCols(static_cast<Eigen::Index>(t) * batch, batch);
            z.noalias() += Wh * h_prev;
            z.colwise() += m.layers[l].b;
            z.topRows(2 * H) = z.topRows(2 * H).unaryExpr(&sigmoid);
            z.middleRows(2 * H, H) = z.middleRows(2 * H, H).array().tanh();
            z.bottomRows(H) = z.bottomRows(H).unaryExpr(&sigmoid);
            MatrixXd cell = z.middleRows(H, H).cwiseProduct(c_prev) + z.topRows(H).cwiseProduct(z.middleRows(2 * H, H));
            MatrixXd tc = cell.array().tanh();
            MatrixXd h = z.bottomRows(H).cwiseProduct(tc);
            lstm_detail::check_finite(cell, l, t, "cell state");
            lstm_detail::check_finite(h, l, t, "hidden state");
            c.gates[l].push_back(std::move(z));
            c.cell[l].push_back(cell);
            c.tanh_cell[l].push_back(std::move(tc));
            c.hidden[l].push_back(h);
            h_prev = std::move(h);
            c_prev = std::move(cell);
        }
    }
    return c;
}

/// D x (T*B) input matrix for a batch of snippets.
inline MatrixXd snippet_batch_matrix(std::span<const Snippet> batch) {
    if (batch.empty()) throw Error(ErrorKind::shape, "empty batch");
    const int D = batch[0].width(), B = static_cast<int>(batch.size());
    MatrixXd x(D, static_cast<Eigen::Index>(kSnippetLength) * B);
    for (int b = 0; b < B; ++b) {
        if (batch[b].width() != D) throw Error(ErrorKind::shape, "snippets of different widths in one batch");
        for (int t = 0; t < kSnippetLength; ++t) {
            const auto row = batch[b].frame(t);
            auto col = x.col(static_cast<Eigen::Index>(t) * B + b);
            for (int d = 0; d < D; ++d) col(d) = row[d];
        }
    }
    return x;
}

inline LstmCache lstm_forward(const LstmModel& m, const Snippet& s) {
    return lstm_forward(m, snippet_batch_matrix(std::span<const Snippet>(&s, 1)), 1);
}

// ---------------------------------------------------------------------------
// Head and loss

struct HeadOutput {
    MatrixXd logits;  // 2 x B
    MatrixXd probs;   // 2 x B
    VectorXd losses;  // per sample
    double loss = 0;  // batch mean
};

inline int label_index(Behavior b) { return static_cast<int>(b); }

/// Affine head, max-subtracted softmax and cross-entropy. Labels are class
/// indices (feeding = 0, swimming = 1).
inline HeadOutput head_and_loss(const LstmModel& m, const MatrixXd& hidden, std::span<const int> labels) {
    if (hidden.rows() != m.layout.hidden_size)
        throw Error(ErrorKind::shape, "hidden width does not match the model");
    if (static_cast<Eigen::Index>(labels.size()) != hidden.cols())
        throw Error(ErrorKind::shape, "one label per sample required");
    HeadOutput out;
    out.logits = m.head_w * hidden;
    out.logits.colwise() += m.head_b;
    const Eigen::Index B = hidden.cols();
    out.probs.resize(kNumBehaviors, B);
    out.losses.resize(B);
    for (Eigen::Index b = 0; b < B; ++b) {
        const auto col = out.logits.col(b);
        Eigen::Index top = 0;
        const double mx = col.maxCoeff(&top);
        double rest = 0;  // sum of exp(l - max) over non-max classes
        for (Eigen::Index k = 0; k < kNumBehaviors; ++k)
            if (k != top) rest += std::exp(col(k) - mx);
        const double denom = 1.0 + rest;
        for (Eigen::Index k = 0; k < kNumBehaviors; ++k) out.probs(k, b) = std::exp(col(k) - mx) / denom;
        const int y = labels[static_cast<std::size_t>(b)];
        if (y < 0 || y >= kNumBehaviors) throw Error(ErrorKind::domain, "label index out of range");
        out.losses(b) = std::log1p(rest) + (mx - col(y));
    }
    out.loss = out.losses.mean();
    return out;
}

// ---------------------------------------------------------------------------
// Backward

/// Gradients of the batch-mean loss for every parameter.
inline LstmModel lstm_backward(const LstmModel& m, const LstmCache& c, const HeadOutput& head,
                               std::span<const int> labels) {
    const auto& L = m.layout;
    if (c.layout != L || static_cast<int>(c.hidden.size()) != L.num_layers)
        throw Error(ErrorKind::state, "forward cache was produced by a different model layout");
    if (static_cast<int>(labels.size()) != c.batch || head.probs.cols() != c.batch)
        throw Error(ErrorKind::state, "forward cache and labels disagree on batch size");
    const int H = L.hidden_size, B = c.batch, T = c.steps;

    LstmModel g = LstmModel::zeros(L);
    MatrixXd dlogits = head.probs;
    for (int b = 0; b < B; ++b) dlogits(labels[static_cast<std::size_t>(b)], b) -= 1.0;
    dlogits /= static_cast<double>(B);
    g.head_w.noalias() = dlogits * c.final_hidden().transpose();
    g.head_b = dlogits.rowwise().sum();

    // Gradient arriving at each step's hidden output from the layer above.
    std::vector<MatrixXd> dh_above(T, MatrixXd::Zero(H, B));
    dh_above[T - 1].noalias() = m.head_w.transpose() * dlogits;

    for (int l = L.num_layers - 1; l >= 0; --l) {
        const auto& W = m.layers[l].W;
        const int in = L.layer_input(l);
        const auto Wh = W.rightCols(H);
        auto& gW = g.layers[l].W;
        auto& gb = g.layers[l].b;
        MatrixXd dz_all(4 * H, static_cast<Eigen::Index>(T) * B);
        MatrixXd dh_rec = MatrixXd::Zero(H, B), dc_rec = MatrixXd::Zero(H, B);
        for (int t = T - 1; t >= 0; --t) {
            const MatrixXd& z = c.gates[l][t];
            const auto i = z.topRows(H).array();
            const auto f = z.middleRows(H, H).array();
            const auto gg = z.middleRows(2 * H, H).array();
            const auto o = z.bottomRows(H).array();
            const auto tc = c.tanh_cell[l][t].array();
            const MatrixXd dh = dh_above[t] + dh_rec;
            const MatrixXd dc = dc_rec.array() + dh.array() * o * (1.0 - tc * tc);
            auto dz = dz_all.middleCols(static_cast<Eigen::Index>(t) * B, B);
            dz.topRows(H) = dc.array() * gg * i * (1.0 - i);
            if (t > 0) dz.middleRows(H, H) = dc.array() * c.cell[l][t - 1].array() * f * (1.0 - f);
            else dz.middleRows(H, H).setZero();
            dz.middleRows(2 * H, H) = dc.array() * i * (1.0 - gg * gg);
            dz.bottomRows(H) = dh.array() * tc * o * (1.0 - o);
            dc_rec = dc.array() * f;
            if (t > 0) {
                dh_rec.noalias() = Wh.transpose() * dz;
                gW.rightCols(H).noalias() += dz * c.hidden[l][t - 1].transpose();
            }
        }
        gb = dz_all.rowwise().sum();
        if (l == 0) {
            gW.leftCols(in).noalias() = dz_all * c.x.transpose();
        } else {
            MatrixXd below(H, static_cast<Eigen::Index>(T) * B);
            for (int t = 0; t < T; ++t) below.middleCols(static_cast<Eigen::Index>(t) * B, B) = c.hidden[l - 1][t];
            gW.leftCols(in).noalias() = dz_all * below.transpose();
            const MatrixXd dbelow = W.leftCols(in).transpose() * dz_all;
            for (int t = 0; t < T; ++t) dh_above[t] = dbelow.middleCols(static_cast<Eigen::Index>(t) * B, B);
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Optimizer

struct TrainConfig {
    double learning_rate = 1e-4;
    double momentum = 0.9;
    int epochs = 100;
    int batch_size = 16;
    std::uint64_t seed = 0;
    double l2 = 0.0;
    /// Stop once the validation average accuracy reaches this value.
    std::optional<double> target_accuracy;

    void validate() const {
        if (!(learning_rate > 0)) throw Error(ErrorKind::config, "learning_rate must be positive");
        if (!(momentum >= 0 && momentum < 1)) throw Error(ErrorKind::config, "momentum must lie in [0,1)");
        if (epochs < 1) throw Error(ErrorKind::config, "epochs must be >= 1");
        if (batch_size < 1) throw Error(ErrorKind::config, "batch_size must be >= 1");
        if (!(l2 >= 0)) throw Error(ErrorKind::config, "l2 must be non-negative");
    }
};

/// v <- momentum*v - lr*(grad + l2*param); param <- param + v. Nothing is
/// modified if any updated value would be non-finite.
inline void sgd_step(LstmModel& m, const LstmModel& grad, LstmModel& velocity, const TrainConfig& cfg) {
    if (grad.layout != m.layout || velocity.layout != m.layout)
        throw Error(ErrorKind::shape, "gradient or velocity layout differs from the model");
    auto next_v = [&](const auto& v, const auto& g, const auto& p) -> MatrixXd {
        return cfg.momentum * v - cfg.learning_rate * (g + cfg.l2 * p);
    };
    std::vector<MatrixXd> vw, vb;
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        vw.push_back(next_v(velocity.layers[l].W, grad.layers[l].W, m.layers[l].W));
        vb.push_back(next_v(velocity.layers[l].b, grad.layers[l].b, m.layers[l].b));
    }
    const MatrixXd hw = next_v(velocity.head_w, grad.head_w, m.head_w);
    const MatrixXd hb = next_v(velocity.head_b, grad.head_b, m.head_b);

    auto finite_sum = [](const MatrixXd& p, const MatrixXd& v) { return (p + v).allFinite() && v.allFinite(); };
    bool ok = finite_sum(m.head_w, hw) && finite_sum(m.head_b, hb);
    for (std::size_t l = 0; ok && l < m.layers.size(); ++l)
        ok = finite_sum(m.layers[l].W, vw[l]) && finite_sum(m.layers[l].b, vb[l]);
    if (!ok) throw Error(ErrorKind::numeric, "non-finite parameter update; step aborted");

    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        velocity.layers[l].W = std::move(vw[l]);
        velocity.layers[l].b = std::move(vb[l]);
        m.layers[l].W += velocity.layers[l].W;
        m.layers[l].b += velocity.layers[l].b;
    }
    velocity.head_w = hw;
    velocity.head_b = hb;
    m.head_w += hw;
    m.head_b += hb;
}

// ---------------------------------------------------------------------------
// Evaluation

struct BehaviorAccuracy {
    std::optional<double> feeding;
    std::optional<double> swimming;
    double average = 0;  // unweighted mean over present classes
};

inline std::vector<Behavior> predict(const LstmModel& m, std::span<const Snippet> snippets, int chunk = 64) {
    std::vector<Behavior> out;
    out.reserve(snippets.size());
    for (std::size_t s = 0; s < snippets.size(); s += static_cast<std::size_t>(chunk)) {
        const auto part = snippets.subspan(s, std::min<std::size_t>(static_cast<std::size_t>(chunk), snippets.size() - s));
        const auto c = lstm_forward(m, snippet_batch_matrix(part), static_cast<int>(part.size()));
        MatrixXd logits = m.head_w * c.final_hidden();
        logits.colwise() += m.head_b;
        for (Eigen::Index b = 0; b < logits.cols(); ++b)
            out.push_back(logits(1, b) > logits(0, b) ? Behavior::swimming : Behavior::feeding);
    }
    return out;
}

inline BehaviorAccuracy accuracy_of(std::span<const Behavior> predicted, std::span<const Behavior> truth,
                                    std::vector<std::string>* warnings = nullptr) {
    if (predicted.size() != truth.size()) throw Error(ErrorKind::shape, "prediction and label counts differ");
    std::size_t correct[2] = {0, 0}, total[2] = {0, 0};
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const int k = label_index(truth[i]);
        ++total[k];
        correct[k] += predicted[i] == truth[i];
    }
    BehaviorAccuracy a;
    double sum = 0;
    int present = 0;
    for (int k = 0; k < 2; ++k) {
        if (!total[k]) {
            if (warnings) warnings->push_back(std::string("no ") + std::string(behavior_name(static_cast<Behavior>(k))) +
                                              " samples; class excluded from the average");
            continue;
        }
        const double acc = static_cast<double>(correct[k]) / static_cast<double>(total[k]);
        (k == 0 ? a.feeding : a.swimming) = acc;
        sum += acc;
        ++present;
    }
    a.average = present ? sum / present : 0.0;
    return a;
}

inline BehaviorAccuracy evaluate_behavior(const LstmModel& m, std::span<const Snippet> snippets,
                                          std::vector<std::string>* warnings = nullptr) {
    std::vector<Behavior> truth;
    for (const auto& s : snippets) truth.push_back(s.label);
    return accuracy_of(predict(m, snippets), truth, warnings);
}

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0;
    BehaviorAccuracy validation;
};

struct TrainResult {
    LstmModel model;  // pocket: best validation average seen
    std::vector<EpochRecord> history;
    int best_epoch = 0;
    double best_average = -1;
};

/// One mini-batch step; returns the batch loss.
inline double train_step(LstmModel& m, LstmModel& velocity, std::span<const Snippet> batch, const TrainConfig& cfg) {
    std::vector<int> labels;
    for (const auto& s : batch) labels.push_back(label_index(s.label));
    const auto cache = lstm_forward(m, snippet_batch_matrix(batch), static_cast<int>(batch.size()));
    const auto head = head_and_loss(m, cache.final_hidden(), labels);
    const auto grad = lstm_backward(m, cache, head, labels);
    sgd_step(m, grad, velocity, cfg);
    return head.loss;
}

/// Seeded initialization and per-epoch shuffles from one stream; after each
/// epoch the validation average accuracy decides whether the pocket copy is
/// replaced (strict improvement only).
inline TrainResult train(const LstmLayout& layout, const TrainConfig& cfg, std::span<const Snippet> train_set,
                         std::span<const Snippet> validation) {
    cfg.validate();
    if (train_set.empty()) throw Error(ErrorKind::config, "empty training set");
    if (validation.empty()) throw Error(ErrorKind::config, "empty validation set");
    if (train_set[0].width() != layout.input_width)
        throw Error(ErrorKind::shape, "snippet width " + std::to_string(train_set[0].width()) +
                                          " != model input width " + std::to_string(layout.input_width));
    Rng rng(cfg.seed);
    TrainResult result;
    LstmModel m = LstmModel::initialize(layout, rng);
    LstmModel velocity = LstmModel::zeros(layout);
    std::vector<Snippet> order(train_set.begin(), train_set.end());
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0;
        for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(cfg.batch_size)) {
            const auto n = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), order.size() - s);
            loss_sum += train_step(m, velocity, std::span<const Snippet>(order).subspan(s, n), cfg) *
                        static_cast<double>(n);
        }
        EpochRecord rec{epoch, loss_sum / static_cast<double>(order.size()), evaluate_behavior(m, validation)};
        result.history.push_back(rec);
        if (rec.validation.average > result.best_average) {
            result.best_average = rec.validation.average;
            result.best_epoch = epoch;
            result.model = m;
        }
        if (cfg.target_accuracy && rec.validation.average >= *cfg.target_accuracy) break;
    }
    return result;
}

inline std::string history_csv(const std::vector<EpochRecord>& history) {
    auto opt = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string(); };
    std::string out = "epoch,train_loss,val_acc_feeding,val_acc_swimming,val_acc_average\n";
    for (const auto& r : history)
        out += std::to_string(r.epoch) + "," + format_number(r.train_loss) + "," + opt(r.validation.feeding) + "," +
               opt(r.validation.swimming) + "," + format_number(r.validation.average) + "\n";
    return out;
}

/// Layout comparison rows: Layout,Feeding,Swimming,Average Accuracy.
inline std::string layout_comparison_csv(const std::vector<std::pair<LstmLayout, BehaviorAccuracy>>& rows) {
    char buf[32];
    auto fmt = [&](const std::optional<double>& v) {
        if (!v) return std::string("-");
        std::snprintf(buf, sizeof buf, "%.4f", *v);
        return std::string(buf);
    };
    std::string out = "Layout,Feeding,Swimming,Average Accuracy\n";
    for (const auto& [layout, acc] : rows)
        out += layout.name() + "," + fmt(acc.feeding) + "," + fmt(acc.swimming) + "," + fmt(acc.average) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Gradient check

/// Loss of one snippet evaluated with scalar loops in `Real`.
template <typename Real>
Real reference_loss(const LstmModel& m, const MatrixXd& x, int label) {
    const auto& L = m.layout;
    const int H = L.hidden_size, T = static_cast<int>(x.cols());
    std::vector<std::vector<Real>> input(T, std::vector<Real>(static_cast<std::size_t>(L.input_width)));
    for (int t = 0; t < T; ++t)
        for (int d = 0; d < L.input_width; ++d) input[t][d] = static_cast<Real>(x(d, t));
    auto sig = [](Real z) { return Real(1) / (Real(1) + std::exp(-z)); };
    for (int l = 0; l < L.num_layers; ++l) {
        const auto& W = m.layers[l].W;
        const auto& b = m.layers[l].b;
        const int in = L.layer_input(l);
        std::vector<Real> h(H, Real(0)), c(H, Real(0));
        std::vector<std::vector<Real>> out(T);
        for (int t = 0; t < T; ++t) {
            std::vector<Real> z(4 * H);
            for (int r = 0; r < 4 * H; ++r) {
                Real s = static_cast<Real>(b(r));
                for (int d = 0; d < in; ++d) s += static_cast<Real>(W(r, d)) * input[t][d];
                for (int k = 0; k < H; ++k) s += static_cast<Real>(W(r, in + k)) * h[k];
                z[r] = s;
            }
            for (int k = 0; k < H; ++k) {
                c[k] = sig(z[H + k]) * c[k] + sig(z[k]) * std::tanh(z[2 * H + k]);
                h[k] = sig(z[3 * H + k]) * std::tanh(c[k]);
            }
            out[t] = h;
        }
        input = std::move(out);
    }
    Real logits[kNumBehaviors];
    for (int k = 0; k < kNumBehaviors; ++k) {
        logits[k] = static_cast<Real>(m.head_b(k));
        for (int j = 0; j < H; ++j) logits[k] += static_cast<Real>(m.head_w(k, j)) * input[T - 1][j];
    }
    const Real mx = std::max(logits[0], logits[1]);
    return mx + std::log(std::exp(logits[0] - mx) + std::exp(logits[1] - mx)) - logits[label];
}

struct GradCheckReport {
    double max_rel_error = 0;
    double mean_rel_error = 0;
    std::string worst_tensor;
    std::map<std::string, double> tensor_max;
    std::size_t parameters = 0;

    bool passed(double tol = 1e-4) const { return max_rel_error < tol; }
};

inline constexpr std::size_t kGradCheckMaxParameters = 10000;
inline constexpr double kRelErrorFloor = 1e-7;

/// Compares lstm_backward against central differences of the extended
/// precision reference loss. `corrupt` may alter the analytic gradient before
/// comparison (fault injection). Relative error per scalar is
/// |a - n| / max(|a|, |n|, 1e-7).
inline GradCheckReport grad_check(LstmModel m, const MatrixXd& x, int label, double h = 1e-5,
                                  const std::function<void(LstmModel&)>& corrupt = {}) {
    if (m.parameter_count() > kGradCheckMaxParameters)
        throw Error(ErrorKind::config, "grad_check needs a model with at most 10000 parameters");
    const int labels[1] = {label};
    const auto cache = lstm_forward(m, x, 1);
    const auto head = head_and_loss(m, cache.final_hidden(), labels);
    LstmModel grad = lstm_backward(m, cache, head, labels);
    if (corrupt) corrupt(grad);

    std::vector<std::pair<std::string, double*>> params;
    visit_parameters(m, [&](const std::string& name, double& v) { params.emplace_back(name, &v); });
    std::vector<double> analytic;
    visit_parameters(grad, [&](const std::string&, double& v) { analytic.push_back(v); });

    GradCheckReport r;
    r.parameters = params.size();
    double sum = 0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        double& p = *params[k].second;
        const double saved = p;
        p = saved + h;
        const double up = p;
        const long double lp = reference_loss<long double>(m, x, label);
        p = saved - h;
        const double down = p;
        const long double lm = reference_loss<long double>(m, x, label);
        p = saved;
        const double numeric = static_cast<double>((lp - lm) / (static_cast<long double>(up) - down));
        const double a = analytic[k];
        const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), kRelErrorFloor});
        sum += err;
        auto& tmax = r.tensor_max[params[k].first];
        tmax = std::max(tmax, err);
        if (err > r.max_rel_error || r.worst_tensor.empty()) {
            r.max_rel_error = err;
            r.worst_tensor = params[k].first;
        }
    }
    r.mean_rel_error = params.empty() ? 0.0 : sum / static_cast<double>(params.size());
    return r;
}

// ---------------------------------------------------------------------------
// PLSM checkpoint: "PLSM", u32 version, u32 n, n bytes of layout JSON
// {"hidden_size","input_width","num_layers"}, then every parameter as
// float64 in visit_parameters order. Little-endian throughout.

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline Bytes encode_checkpoint(const LstmModel& m) {
    ByteWriter w;
    w.magic("PLSM");
    w.u32(kCheckpointVersion);
    const std::string desc = nlohmann::json{{"num_layers", m.layout.num_layers},
                                            {"hidden_size", m.layout.hidden_size},
                                            {"input_width", m.layout.input_width}}
                                 .dump();
    w.u32(static_cast<std::uint32_t>(desc.size()));
    w.raw(desc);
    visit_parameters(m, [&](const std::string&, const double& v) { w.f64(v); });
    return std::move(w).bytes();
}

inline LstmModel decode_checkpoint(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.expect_magic("PLSM");
    if (const auto v = r.u32(); v != kCheckpointVersion)
        throw Error(ErrorKind::version, "checkpoint version " + std::to_string(v) + ", expected " +
                                            std::to_string(kCheckpointVersion));
    const auto n = r.u32();
    LstmLayout layout;
    try {
        const auto desc = nlohmann::json::parse(r.text(n));
        layout = {desc.at("num_layers").get<int>(), desc.at("hidden_size").get<int>(),
                  desc.at("input_width").get<int>()};
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::schema, std::string("checkpoint layout descriptor: ") + e.what());
    }
    LstmModel m = LstmModel::zeros(layout);
    if (r.remaining() != m.parameter_count() * 8)
        throw Error(ErrorKind::parse, "checkpoint holds " + std::to_string(r.remaining()) + " parameter bytes, layout needs " +
                                          std::to_string(m.parameter_count() * 8));
    visit_parameters(m, [&](const std::string&, double& v) { v = r.f64(); });
    if (!m.all_finite()) throw Error(ErrorKind::numeric, "checkpoint contains non-finite parameters");
    return m;
}

}  // namespace avr
