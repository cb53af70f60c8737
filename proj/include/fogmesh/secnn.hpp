#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fogmesh/common.hpp"

namespace fogmesh::secnn {

constexpr std::size_t kParamBudget = 20000;

struct ModelConfig {
    std::array<int, 3> conv_channels{16, 24, 32};
    int kernel_size = 5;
    int pool_size = 2;
    int se_reduction = 4;
    std::array<int, 2> dense_units{24, 16};
    double dropout_rate = 0.5;
    int input_len = 128;
    int input_channels = 3;
    std::uint64_t seed = 0;

    // temporal length after block k (1-based); "same" conv keeps length,
    // pooling divides by pool_size
    int len_after(int k) const {
        int len = input_len;
        for (int i = 0; i < k; ++i) len /= pool_size;
        return len;
    }
    int flatten_size() const { return len_after(3) * conv_channels[2]; }

    void validate() const {
        if (input_len <= 0 || input_channels <= 0) throw Error("ModelConfig: bad input shape");
        int len = input_len;
        for (int c : conv_channels) {
            if (c <= 0 || c % se_reduction != 0)
                throw Error("ModelConfig: conv channels must be positive and divisible by se_reduction");
            if (len % pool_size != 0) throw Error("ModelConfig: length not divisible by pool size");
            len /= pool_size;
        }
        if (dense_units[0] <= 0 || dense_units[1] <= 0) throw Error("ModelConfig: bad dense units");
        if (kernel_size < 1 || kernel_size % 2 == 0) throw Error("ModelConfig: kernel size must be odd");
    }
};

// Short stable identifier for a config; guards bundle/model compatibility.
std::string config_hash(const ModelConfig& cfg);

template <typename T>
struct NamedTensor {
    std::string name;
    std::vector<int> shape;
    std::vector<T> v;

    std::size_t size() const { return v.size(); }
};

// Tensor manifest order is fixed: per block (conv.w, conv.b, se.fc1.w,
// se.fc1.b, se.fc2.w, se.fc2.b), then dense1, dense2, out.
inline std::vector<std::pair<std::string, std::vector<int>>> tensor_manifest(
    const ModelConfig& cfg) {
    std::vector<std::pair<std::string, std::vector<int>>> m;
    int cin = cfg.input_channels;
    for (int b = 0; b < 3; ++b) {
        int cout = cfg.conv_channels[b];
        int cr = cout / cfg.se_reduction;
        std::string p = "block" + std::to_string(b + 1) + ".";
        m.push_back({p + "conv.w", {cout, cin, cfg.kernel_size}});
        m.push_back({p + "conv.b", {cout}});
        m.push_back({p + "se.fc1.w", {cr, cout}});
        m.push_back({p + "se.fc1.b", {cr}});
        m.push_back({p + "se.fc2.w", {cout, cr}});
        m.push_back({p + "se.fc2.b", {cout}});
        cin = cout;
    }
    int flat = cfg.flatten_size();
    m.push_back({"dense1.w", {cfg.dense_units[0], flat}});
    m.push_back({"dense1.b", {cfg.dense_units[0]}});
    m.push_back({"dense2.w", {cfg.dense_units[1], cfg.dense_units[0]}});
    m.push_back({"dense2.b", {cfg.dense_units[1]}});
    m.push_back({"out.w", {1, cfg.dense_units[1]}});
    m.push_back({"out.b", {1}});
    return m;
}

inline std::size_t shape_product(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

inline std::size_t count_params(const ModelConfig& cfg) {
    std::size_t n = 0;
    for (const auto& [name, shape] : tensor_manifest(cfg)) n += shape_product(shape);
    return n;
}

template <typename T>
struct Model {
    ModelConfig cfg;
    std::vector<NamedTensor<T>> params;

    NamedTensor<T>& tensor(const std::string& name) {
        for (auto& t : params)
            if (t.name == name) return t;
        throw Error("no tensor named " + name);
    }
    const NamedTensor<T>& tensor(const std::string& name) const {
        return const_cast<Model*>(this)->tensor(name);
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& t : params) n += t.size();
        return n;
    }
};

template <typename T>
std::size_t count_params(const Model<T>& model) {
    return model.param_count();
}

// Zero-initialized parameter set with the manifest shapes; also the gradient
// accumulator layout.
template <typename T>
std::vector<NamedTensor<T>> zero_params(const ModelConfig& cfg) {
    std::vector<NamedTensor<T>> out;
    for (const auto& [name, shape] : tensor_manifest(cfg))
        out.push_back({name, shape, std::vector<T>(shape_product(shape), T(0))});
    return out;
}

// Glorot-uniform weights, zero biases, deterministic from cfg.seed.
// output_bias_init seeds the final layer's bias (class-imbalance prior).
template <typename T>
Model<T> build_model(const ModelConfig& cfg, double output_bias_init = 0.0) {
    cfg.validate();
    std::size_t n = count_params(cfg);
    if (n > kParamBudget) throw BudgetExceeded(n);

    Model<T> model;
    model.cfg = cfg;
    model.params = zero_params<T>(cfg);
    std::size_t idx = 0;
    for (auto& t : model.params) {
        bool is_bias = t.shape.size() == 1;
        if (!is_bias) {
            // fan_in = product of all but the leading (output) dim
            std::size_t fan_out = static_cast<std::size_t>(t.shape[0]);
            std::size_t fan_in = t.size() / fan_out;
            double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
            Rng rng(derive_seed(cfg.seed, "init", idx));
            for (auto& w : t.v) w = static_cast<T>(rng.next_uniform(-limit, limit));
        }
        ++idx;
    }
    model.tensor("out.b").v[0] = static_cast<T>(output_bias_init);
    return model;
}

template <typename T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

// Per-block forward cache; retained for backprop and for activation dumps.
template <typename T>
struct BlockTrace {
    std::vector<T> conv_pre;  // [len][C] pre-activation
    std::vector<T> relu;      // [len][C]
    std::vector<T> squeeze;   // [C] temporal mean
    std::vector<T> hid_pre;   // [C/r]
    std::vector<T> hid;       // [C/r] post-ReLU
    std::vector<T> gate_pre;  // [C]
    std::vector<T> gate;      // [C] sigmoid, in (0,1)
    std::vector<T> gated;     // [len][C]
    std::vector<T> pooled;    // [len/pool][C]
    std::vector<int> argmax;  // [len/pool][C] index into gated rows
};

template <typename T>
struct Trace {
    std::array<BlockTrace<T>, 3> blocks;
    std::vector<T> d1_pre, d1, d1_drop, drop_mask;
    std::vector<T> d2_pre, d2;
    T logit{};
    T prob{};
};

namespace detail {

// 1-D convolution, "same" zero padding. in: [len][cin], out: [len][cout].
template <typename T>
void conv1d_same(const std::vector<T>& in, int len, int cin, const NamedTensor<T>& w,
                 const NamedTensor<T>& b, std::vector<T>& out) {
    const int cout = w.shape[0];
    const int k = w.shape[2];
    const int pad = k / 2;
    out.assign(static_cast<std::size_t>(len) * cout, T(0));
    for (int t = 0; t < len; ++t) {
        for (int o = 0; o < cout; ++o) {
            T acc = b.v[o];
            const T* wrow = &w.v[static_cast<std::size_t>(o) * cin * k];
            for (int i = 0; i < cin; ++i) {
                for (int kk = 0; kk < k; ++kk) {
                    int src = t + kk - pad;
                    if (src < 0 || src >= len) continue;
                    acc += wrow[i * k + kk] * in[static_cast<std::size_t>(src) * cin + i];
                }
            }
            out[static_cast<std::size_t>(t) * cout + o] = acc;
        }
    }
}

// y = W x + b with W: [rows][cols]
template <typename T>
void dense(const NamedTensor<T>& w, const NamedTensor<T>& b, const std::vector<T>& x,
           std::vector<T>& y) {
    const int rows = w.shape[0];
    const int cols = w.shape[1];
    y.assign(rows, T(0));
    for (int r = 0; r < rows; ++r) {
        T acc = b.v[r];
        const T* wrow = &w.v[static_cast<std::size_t>(r) * cols];
        for (int c = 0; c < cols; ++c) acc += wrow[c] * x[c];
        y[r] = acc;
    }
}

}  // namespace detail

// Squeeze-and-excitation gate: temporal mean -> bottleneck dense pair ->
// sigmoid -> per-channel scaling. Standalone so it can be tested against an
// oracle; forward() runs the same code via BlockTrace.
template <typename T>
void se_apply(const std::vector<T>& in, int len, int channels, const NamedTensor<T>& fc1w,
              const NamedTensor<T>& fc1b, const NamedTensor<T>& fc2w, const NamedTensor<T>& fc2b,
              BlockTrace<T>& bt) {
    bt.squeeze.assign(channels, T(0));
    for (int t = 0; t < len; ++t)
        for (int c = 0; c < channels; ++c) bt.squeeze[c] += in[static_cast<std::size_t>(t) * channels + c];
    for (int c = 0; c < channels; ++c) bt.squeeze[c] /= static_cast<T>(len);

    detail::dense(fc1w, fc1b, bt.squeeze, bt.hid_pre);
    bt.hid = bt.hid_pre;
    for (auto& v : bt.hid) v = v > T(0) ? v : T(0);

    detail::dense(fc2w, fc2b, bt.hid, bt.gate_pre);
    bt.gate.resize(channels);
    for (int c = 0; c < channels; ++c) bt.gate[c] = sigmoid(bt.gate_pre[c]);

    bt.gated.resize(in.size());
    for (int t = 0; t < len; ++t)
        for (int c = 0; c < channels; ++c)
            bt.gated[static_cast<std::size_t>(t) * channels + c] =
                in[static_cast<std::size_t>(t) * channels + c] * bt.gate[c];
}

// Forward pass. `window` is [input_len][input_channels] row-major.
// Inference mode when drop_rng is null; in training mode an inverted dropout
// mask is drawn between the two dense layers.
template <typename T>
T forward(const Model<T>& model, const std::vector<T>& window, Trace<T>* trace = nullptr,
          Rng* drop_rng = nullptr) {
    const ModelConfig& cfg = model.cfg;
    if (window.size() != static_cast<std::size_t>(cfg.input_len) * cfg.input_channels)
        throw ShapeMismatch("forward: window shape mismatch");
    for (T v : window)
        if (!std::isfinite(static_cast<double>(v))) throw ShapeMismatch("forward: non-finite input");

    Trace<T> local;
    Trace<T>& tr = trace ? *trace : local;

    const std::vector<T>* in = &window;
    int len = cfg.input_len;
    int cin = cfg.input_channels;
    for (int b = 0; b < 3; ++b) {
        auto& bt = tr.blocks[b];
        std::string p = "block" + std::to_string(b + 1) + ".";
        const int cout = cfg.conv_channels[b];

        detail::conv1d_same(*in, len, cin, model.tensor(p + "conv.w"), model.tensor(p + "conv.b"),
                            bt.conv_pre);
        bt.relu = bt.conv_pre;
        for (auto& v : bt.relu) v = v > T(0) ? v : T(0);

        se_apply(bt.relu, len, cout, model.tensor(p + "se.fc1.w"), model.tensor(p + "se.fc1.b"),
                 model.tensor(p + "se.fc2.w"), model.tensor(p + "se.fc2.b"), bt);

        // max pooling, earliest maximal index wins
        const int plen = len / cfg.pool_size;
        bt.pooled.assign(static_cast<std::size_t>(plen) * cout, T(0));
        bt.argmax.assign(static_cast<std::size_t>(plen) * cout, 0);
        for (int t = 0; t < plen; ++t) {
            for (int c = 0; c < cout; ++c) {
                int best = t * cfg.pool_size;
                T bestv = bt.gated[static_cast<std::size_t>(best) * cout + c];
                for (int j = 1; j < cfg.pool_size; ++j) {
                    int src = t * cfg.pool_size + j;
                    T v = bt.gated[static_cast<std::size_t>(src) * cout + c];
                    if (v > bestv) {
                        bestv = v;
                        best = src;
                    }
                }
                bt.pooled[static_cast<std::size_t>(t) * cout + c] = bestv;
                bt.argmax[static_cast<std::size_t>(t) * cout + c] = best;
            }
        }
        in = &bt.pooled;
        len = plen;
        cin = cout;
    }

    // flatten is a no-op on the row-major pooled map
    const std::vector<T>& flat = tr.blocks[2].pooled;

    detail::dense(model.tensor("dense1.w"), model.tensor("dense1.b"), flat, tr.d1_pre);
    tr.d1 = tr.d1_pre;
    for (auto& v : tr.d1) v = v > T(0) ? v : T(0);

    if (drop_rng && cfg.dropout_rate > 0.0) {
        const T keep_scale = static_cast<T>(1.0 / (1.0 - cfg.dropout_rate));
        tr.drop_mask.resize(tr.d1.size());
        tr.d1_drop.resize(tr.d1.size());
        for (std::size_t i = 0; i < tr.d1.size(); ++i) {
            tr.drop_mask[i] = drop_rng->next_uniform() < cfg.dropout_rate ? T(0) : keep_scale;
            tr.d1_drop[i] = tr.d1[i] * tr.drop_mask[i];
        }
    } else {
        tr.drop_mask.assign(tr.d1.size(), T(1));
        tr.d1_drop = tr.d1;
    }

    detail::dense(model.tensor("dense2.w"), model.tensor("dense2.b"), tr.d1_drop, tr.d2_pre);
    tr.d2 = tr.d2_pre;
    for (auto& v : tr.d2) v = v > T(0) ? v : T(0);

    std::vector<T> out;
    detail::dense(model.tensor("out.w"), model.tensor("out.b"), tr.d2, out);
    tr.logit = out[0];
    tr.prob = sigmoid(tr.logit);
    return tr.prob;
}

// Gradients of a scalar loss with respect to every parameter, given
// d(loss)/d(logit). Accumulates into `grads` (zero_params layout) so batch
// sums fall out naturally.
template <typename T>
void backward(const Model<T>& model, const std::vector<T>& window, const Trace<T>& tr,
              T dlogit, std::vector<NamedTensor<T>>& grads) {
    const ModelConfig& cfg = model.cfg;
    auto grad = [&grads](const std::string& name) -> NamedTensor<T>& {
        for (auto& t : grads)
            if (t.name == name) return t;
        throw Error("no gradient tensor named " + name);
    };

    // output layer
    const auto& ow = model.tensor("out.w");
    auto& gow = grad("out.w");
    auto& gob = grad("out.b");
    std::vector<T> dd2(tr.d2.size(), T(0));
    for (std::size_t j = 0; j < tr.d2.size(); ++j) {
        gow.v[j] += dlogit * tr.d2[j];
        dd2[j] = dlogit * ow.v[j];
    }
    gob.v[0] += dlogit;

    // dense2 (ReLU)
    const auto& w2 = model.tensor("dense2.w");
    auto& gw2 = grad("dense2.w");
    auto& gb2 = grad("dense2.b");
    std::vector<T> dd1_drop(tr.d1_drop.size(), T(0));
    for (std::size_t r = 0; r < dd2.size(); ++r) {
        T d = tr.d2_pre[r] > T(0) ? dd2[r] : T(0);
        gb2.v[r] += d;
        for (std::size_t c = 0; c < tr.d1_drop.size(); ++c) {
            gw2.v[r * tr.d1_drop.size() + c] += d * tr.d1_drop[c];
            dd1_drop[c] += d * w2.v[r * tr.d1_drop.size() + c];
        }
    }

    // dropout + dense1 (ReLU)
    const auto& w1 = model.tensor("dense1.w");
    auto& gw1 = grad("dense1.w");
    auto& gb1 = grad("dense1.b");
    const std::vector<T>& flat = tr.blocks[2].pooled;
    std::vector<T> dflat(flat.size(), T(0));
    for (std::size_t r = 0; r < dd1_drop.size(); ++r) {
        T d = dd1_drop[r] * tr.drop_mask[r];
        d = tr.d1_pre[r] > T(0) ? d : T(0);
        gb1.v[r] += d;
        for (std::size_t c = 0; c < flat.size(); ++c) {
            gw1.v[r * flat.size() + c] += d * flat[c];
            dflat[c] += d * w1.v[r * flat.size() + c];
        }
    }

    // blocks, last to first
    std::vector<T> dpooled = std::move(dflat);
    for (int b = 2; b >= 0; --b) {
        const auto& bt = tr.blocks[b];
        std::string p = "block" + std::to_string(b + 1) + ".";
        const int cout = cfg.conv_channels[b];
        const int len = cfg.len_after(b);  // length entering this block
        const int cin_b = b == 0 ? cfg.input_channels : cfg.conv_channels[b - 1];
        const std::vector<T>& input = b == 0 ? window : tr.blocks[b - 1].pooled;

        // unpool
        std::vector<T> dgated(bt.gated.size(), T(0));
        for (std::size_t i = 0; i < dpooled.size(); ++i) {
            int t = static_cast<int>(i) / cout;
            int c = static_cast<int>(i) % cout;
            dgated[static_cast<std::size_t>(bt.argmax[i]) * cout + c] += dpooled[i];
        }

        // gating: gated[t][c] = relu[t][c] * gate[c]
        std::vector<T> drelu(bt.relu.size(), T(0));
        std::vector<T> dgate(cout, T(0));
        for (int t = 0; t < len; ++t) {
            for (int c = 0; c < cout; ++c) {
                std::size_t i = static_cast<std::size_t>(t) * cout + c;
                drelu[i] += dgated[i] * bt.gate[c];
                dgate[c] += dgated[i] * bt.relu[i];
            }
        }

        // gate sigmoid
        std::vector<T> dgate_pre(cout);
        for (int c = 0; c < cout; ++c) dgate_pre[c] = dgate[c] * bt.gate[c] * (T(1) - bt.gate[c]);

        // se fc2
        const auto& f2w = model.tensor(p + "se.fc2.w");
        auto& gf2w = grad(p + "se.fc2.w");
        auto& gf2b = grad(p + "se.fc2.b");
        const int cr = static_cast<int>(bt.hid.size());
        std::vector<T> dhid(cr, T(0));
        for (int c = 0; c < cout; ++c) {
            gf2b.v[c] += dgate_pre[c];
            for (int h = 0; h < cr; ++h) {
                gf2w.v[static_cast<std::size_t>(c) * cr + h] += dgate_pre[c] * bt.hid[h];
                dhid[h] += dgate_pre[c] * f2w.v[static_cast<std::size_t>(c) * cr + h];
            }
        }

        // se fc1 (ReLU)
        const auto& f1w = model.tensor(p + "se.fc1.w");
        auto& gf1w = grad(p + "se.fc1.w");
        auto& gf1b = grad(p + "se.fc1.b");
        std::vector<T> dsqueeze(cout, T(0));
        for (int h = 0; h < cr; ++h) {
            T d = bt.hid_pre[h] > T(0) ? dhid[h] : T(0);
            gf1b.v[h] += d;
            for (int c = 0; c < cout; ++c) {
                gf1w.v[static_cast<std::size_t>(h) * cout + c] += d * bt.squeeze[c];
                dsqueeze[c] += d * f1w.v[static_cast<std::size_t>(h) * cout + c];
            }
        }

        // squeeze mean spreads evenly over time
        for (int t = 0; t < len; ++t)
            for (int c = 0; c < cout; ++c)
                drelu[static_cast<std::size_t>(t) * cout + c] += dsqueeze[c] / static_cast<T>(len);

        // relu then conv
        const auto& cw = model.tensor(p + "conv.w");
        auto& gcw = grad(p + "conv.w");
        auto& gcb = grad(p + "conv.b");
        const int k = cfg.kernel_size;
        const int pad = k / 2;
        std::vector<T> din(static_cast<std::size_t>(len) * cin_b, T(0));
        for (int t = 0; t < len; ++t) {
            for (int o = 0; o < cout; ++o) {
                std::size_t oi = static_cast<std::size_t>(t) * cout + o;
                T d = bt.conv_pre[oi] > T(0) ? drelu[oi] : T(0);
                if (d == T(0)) continue;
                gcb.v[o] += d;
                for (int i = 0; i < cin_b; ++i) {
                    for (int kk = 0; kk < k; ++kk) {
                        int src = t + kk - pad;
                        if (src < 0 || src >= len) continue;
                        std::size_t wi = (static_cast<std::size_t>(o) * cin_b + i) * k + kk;
                        gcw.v[wi] += d * input[static_cast<std::size_t>(src) * cin_b + i];
                        din[static_cast<std::size_t>(src) * cin_b + i] += d * cw.v[wi];
                    }
                }
            }
        }
        dpooled = std::move(din);  // gradient wrt this block's input = previous pooled
    }
}

}  // namespace fogmesh::secnn
