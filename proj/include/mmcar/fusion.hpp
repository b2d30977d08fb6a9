#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmcar/base64.hpp"
#include "mmcar/rng.hpp"
#include "mmcar/types.hpp"

namespace mmcar {

// Numerically stable logistic; branches on sign so exp never overflows.
inline double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

// Square row-major matrix.
struct Mat {
    int n = 0;
    Vec a;
    Mat() = default;
    explicit Mat(int dim) : n(dim), a(static_cast<std::size_t>(dim) * dim, 0.0) {}
    double& at(int i, int j) { return a[static_cast<std::size_t>(i) * n + j]; }
    double at(int i, int j) const { return a[static_cast<std::size_t>(i) * n + j]; }
};

struct PairAttentionParams {
    Mat W;
    Mat Bmat;
    PairAttentionParams() = default;
    explicit PairAttentionParams(int d) : W(d), Bmat(d) {}
};

enum class SharingMode { PerPair, FullyShared };

inline const char* to_string(SharingMode m) {
    return m == SharingMode::PerPair ? "per-pair" : "fully-shared";
}

inline SharingMode sharing_mode_from_string(const std::string& s) {
    if (s == "per-pair") return SharingMode::PerPair;
    if (s == "fully-shared") return SharingMode::FullyShared;
    throw DataError("unknown sharing mode: " + s);
}

// Modality pairs in concatenation order: (i,t), (i,a), (t,a).
inline constexpr int kNumPairs = 3;
inline constexpr std::array<const char*, kNumPairs> kPairNames = {"it", "ia", "ta"};

struct ModelParams {
    int d = 0;
    SharingMode sharing = SharingMode::PerPair;
    std::vector<PairAttentionParams> pairs;  // size 3 (per-pair) or 1 (fully-shared)
    Vec head_w;                              // length 6d
    double head_b = 0.0;

    int stored_pairs() const { return sharing == SharingMode::PerPair ? kNumPairs : 1; }

    PairAttentionParams& pair(int k) {
        return pairs[sharing == SharingMode::PerPair ? k : 0];
    }
    const PairAttentionParams& pair(int k) const {
        return pairs[sharing == SharingMode::PerPair ? k : 0];
    }

    std::size_t param_count() const {
        return static_cast<std::size_t>(stored_pairs()) * 2 * d * d + head_w.size() + 1;
    }

    Vec flatten() const {
        Vec out;
        out.reserve(param_count());
        for (const auto& p : pairs) {
            out.insert(out.end(), p.W.a.begin(), p.W.a.end());
            out.insert(out.end(), p.Bmat.a.begin(), p.Bmat.a.end());
        }
        out.insert(out.end(), head_w.begin(), head_w.end());
        out.push_back(head_b);
        return out;
    }

    void set_from_flat(const Vec& flat) {
        if (flat.size() != param_count()) throw InternalError("set_from_flat: size mismatch");
        std::size_t pos = 0;
        for (auto& p : pairs) {
            std::copy(flat.begin() + pos, flat.begin() + pos + p.W.a.size(), p.W.a.begin());
            pos += p.W.a.size();
            std::copy(flat.begin() + pos, flat.begin() + pos + p.Bmat.a.size(), p.Bmat.a.begin());
            pos += p.Bmat.a.size();
        }
        std::copy(flat.begin() + pos, flat.begin() + pos + head_w.size(), head_w.begin());
        pos += head_w.size();
        head_b = flat[pos];
    }

    // Human-readable name of a flattened coordinate, for diagnostics.
    std::string coord_name(std::size_t k) const {
        std::size_t block = static_cast<std::size_t>(d) * d;
        for (int p = 0; p < stored_pairs(); ++p) {
            std::string tag = sharing == SharingMode::PerPair ? std::string("_") + kPairNames[p] : "";
            if (k < block) return "W" + tag + "[" + std::to_string(k / d) + "," + std::to_string(k % d) + "]";
            k -= block;
            if (k < block) return "B" + tag + "[" + std::to_string(k / d) + "," + std::to_string(k % d) + "]";
            k -= block;
        }
        if (k < head_w.size()) return "head_w[" + std::to_string(k) + "]";
        return "head_b";
    }
};

inline ModelParams init_params(int d, SharingMode sharing, std::uint64_t seed) {
    if (d < 1) throw DataError("init_params: d must be >= 1");
    ModelParams p;
    p.d = d;
    p.sharing = sharing;
    p.pairs.assign(sharing == SharingMode::PerPair ? kNumPairs : 1, PairAttentionParams(d));
    p.head_w.assign(static_cast<std::size_t>(6) * d, 0.0);
    p.head_b = 0.0;
    double bound = 1.0 / std::sqrt(static_cast<double>(d));
    Rng rng(seed);
    for (auto& pp : p.pairs) {
        for (double& x : pp.W.a) x = rng.uniform(-bound, bound);
        for (double& x : pp.Bmat.a) x = rng.uniform(-bound, bound);
    }
    for (double& x : p.head_w) x = rng.uniform(-bound, bound);
    return p;
}

struct Gradients {
    std::vector<PairAttentionParams> pairs;
    Vec head_w;
    double head_b = 0.0;

    static Gradients zeros_like(const ModelParams& p) {
        Gradients g;
        g.pairs.assign(p.pairs.size(), PairAttentionParams(p.d));
        g.head_w.assign(p.head_w.size(), 0.0);
        return g;
    }

    void add(const Gradients& o) {
        for (std::size_t k = 0; k < pairs.size(); ++k) {
            for (std::size_t i = 0; i < pairs[k].W.a.size(); ++i) pairs[k].W.a[i] += o.pairs[k].W.a[i];
            for (std::size_t i = 0; i < pairs[k].Bmat.a.size(); ++i)
                pairs[k].Bmat.a[i] += o.pairs[k].Bmat.a[i];
        }
        for (std::size_t i = 0; i < head_w.size(); ++i) head_w[i] += o.head_w[i];
        head_b += o.head_b;
    }

    void scale(double s) {
        for (auto& p : pairs) {
            for (double& x : p.W.a) x *= s;
            for (double& x : p.Bmat.a) x *= s;
        }
        for (double& x : head_w) x *= s;
        head_b *= s;
    }

    Vec flatten() const {
        Vec out;
        for (const auto& p : pairs) {
            out.insert(out.end(), p.W.a.begin(), p.W.a.end());
            out.insert(out.end(), p.Bmat.a.begin(), p.Bmat.a.end());
        }
        out.insert(out.end(), head_w.begin(), head_w.end());
        out.push_back(head_b);
        return out;
    }
};

// ---------------------------------------------------------------------------
// Forward paths

// Fast path: streams over j, never materializes a d x d matrix.
// u_xy = xhat ++ yhat with xhat_i = sum_j sigma(C[i,j] W[i,j] + B[i,j]) C[i,j],
// C[i,j] = x_i y_j, and yhat from the transposed products with the same W, B.
inline Vec cross_attention_pair(const Vec& x, const Vec& y, const PairAttentionParams& p) {
    const int d = p.W.n;
    if (static_cast<int>(x.size()) != d || static_cast<int>(y.size()) != d)
        throw DataError("cross_attention_pair: dimension mismatch");
    Vec u(static_cast<std::size_t>(2) * d, 0.0);
    for (int i = 0; i < d; ++i) {
        double xh = 0.0, yh = 0.0;
        for (int j = 0; j < d; ++j) {
            double w = p.W.at(i, j), b = p.Bmat.at(i, j);
            double cxy = x[i] * y[j];
            xh += stable_sigmoid(cxy * w + b) * cxy;
            double cyx = y[i] * x[j];
            yh += stable_sigmoid(cyx * w + b) * cyx;
        }
        u[i] = xh;
        u[d + i] = yh;
    }
    return u;
}

struct ForwardTrace {
    Vec u_all;  // 6d, order u_it ++ u_ia ++ u_ta
    double logit = 0.0;
    double zhat = 0.5;
};

inline ForwardTrace forward(const Vec& i, const Vec& t, const Vec& a, const ModelParams& params) {
    const int d = params.d;
    if (static_cast<int>(i.size()) != d || static_cast<int>(t.size()) != d ||
        static_cast<int>(a.size()) != d)
        throw DataError("forward: input dimension mismatch");
    ForwardTrace tr;
    tr.u_all.reserve(static_cast<std::size_t>(6) * d);
    const std::array<std::pair<const Vec*, const Vec*>, kNumPairs> mods = {
        {{&i, &t}, {&i, &a}, {&t, &a}}};
    for (int k = 0; k < kNumPairs; ++k) {
        Vec u = cross_attention_pair(*mods[k].first, *mods[k].second, params.pair(k));
        tr.u_all.insert(tr.u_all.end(), u.begin(), u.end());
    }
    if (!all_finite(tr.u_all)) throw InternalError("forward: non-finite unified embedding");
    tr.logit = dot(params.head_w, tr.u_all) + params.head_b;
    tr.zhat = stable_sigmoid(tr.logit);
    return tr;
}

// Naive oracle path: materializes C, S and the full matrix product, then
// takes the diagonal. Kept for testing the fast path against.
struct NaivePairTrace {
    Mat C;    // C_xy
    Mat S_x;  // sigma(C_xy o W + B)
    Mat S_y;  // sigma(C_yx o W + B)
    Vec xhat, yhat;
    Vec u;  // xhat ++ yhat
};

inline NaivePairTrace naive_cross_attention_pair(const Vec& x, const Vec& y,
                                                 const PairAttentionParams& p) {
    const int d = p.W.n;
    if (static_cast<int>(x.size()) != d || static_cast<int>(y.size()) != d)
        throw DataError("naive_cross_attention_pair: dimension mismatch");
    NaivePairTrace tr;
    tr.C = Mat(d);
    tr.S_x = Mat(d);
    tr.S_y = Mat(d);
    Mat C_yx(d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            tr.C.at(i, j) = x[i] * y[j];
            C_yx.at(i, j) = y[i] * x[j];
        }
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            tr.S_x.at(i, j) = stable_sigmoid(tr.C.at(i, j) * p.W.at(i, j) + p.Bmat.at(i, j));
            tr.S_y.at(i, j) = stable_sigmoid(C_yx.at(i, j) * p.W.at(i, j) + p.Bmat.at(i, j));
        }
    // xhat = diag(S_x C_xy^T): full product, then the diagonal
    auto diag_of_product = [d](const Mat& S, const Mat& C) {
        Mat prod(d);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) {
                double s = 0.0;
                for (int k = 0; k < d; ++k) s += S.at(i, k) * C.at(j, k);  // C^T
                prod.at(i, j) = s;
            }
        Vec diag(d);
        for (int i = 0; i < d; ++i) diag[i] = prod.at(i, i);
        return diag;
    };
    tr.xhat = diag_of_product(tr.S_x, tr.C);
    tr.yhat = diag_of_product(tr.S_y, C_yx);
    tr.u = tr.xhat;
    tr.u.insert(tr.u.end(), tr.yhat.begin(), tr.yhat.end());
    return tr;
}

inline ForwardTrace naive_forward(const Vec& i, const Vec& t, const Vec& a,
                                  const ModelParams& params) {
    ForwardTrace tr;
    const std::array<std::pair<const Vec*, const Vec*>, kNumPairs> mods = {
        {{&i, &t}, {&i, &a}, {&t, &a}}};
    for (int k = 0; k < kNumPairs; ++k) {
        NaivePairTrace pt = naive_cross_attention_pair(*mods[k].first, *mods[k].second, params.pair(k));
        tr.u_all.insert(tr.u_all.end(), pt.u.begin(), pt.u.end());
    }
    tr.logit = dot(params.head_w, tr.u_all) + params.head_b;
    tr.zhat = stable_sigmoid(tr.logit);
    return tr;
}

// ---------------------------------------------------------------------------
// Loss

inline constexpr double kProbClamp = 1e-12;

inline double bce_single(double zhat, int z) {
    double p = zhat;
    if (p < kProbClamp) p = kProbClamp;
    if (p > 1.0 - kProbClamp) p = 1.0 - kProbClamp;
    return -(z * std::log(p) + (1 - z) * std::log(1.0 - p));
}

inline double bce_loss(const Vec& zhat, const std::vector<int>& z) {
    if (zhat.empty() || zhat.size() != z.size())
        throw DataError("bce_loss: empty or mismatched batch");
    double s = 0.0;
    for (std::size_t i = 0; i < zhat.size(); ++i) s += bce_single(zhat[i], z[i]);
    return s / static_cast<double>(zhat.size());
}

// ---------------------------------------------------------------------------
// Backward

// Exact per-sample gradients. dL/dlogit = zhat - z; through the head into
// each pair block, then through xhat_i = sum_j S C with
// dxhat_i/dW[i,j] = C^2 S (1 - S) and dxhat_i/dB[i,j] = C S (1 - S).
// Both directions of a pair share (W, B); fully-shared mode sums over pairs.
inline Gradients backward(const ForwardTrace& trace, const Vec& i, const Vec& t, const Vec& a,
                          int z, const ModelParams& params) {
    const int d = params.d;
    if (static_cast<int>(trace.u_all.size()) != 6 * d)
        throw InternalError("backward: trace does not match params");
    Gradients g = Gradients::zeros_like(params);
    const double gl = trace.zhat - static_cast<double>(z);
    for (std::size_t k = 0; k < g.head_w.size(); ++k) g.head_w[k] = gl * trace.u_all[k];
    g.head_b = gl;

    const std::array<std::pair<const Vec*, const Vec*>, kNumPairs> mods = {
        {{&i, &t}, {&i, &a}, {&t, &a}}};
    for (int k = 0; k < kNumPairs; ++k) {
        const Vec& x = *mods[k].first;
        const Vec& y = *mods[k].second;
        const PairAttentionParams& p = params.pair(k);
        PairAttentionParams& gp = g.pairs[params.sharing == SharingMode::PerPair ? k : 0];
        const std::size_t off = static_cast<std::size_t>(2) * d * k;
        for (int ii = 0; ii < d; ++ii) {
            double gx = gl * params.head_w[off + ii];
            double gy = gl * params.head_w[off + d + ii];
            for (int j = 0; j < d; ++j) {
                double w = p.W.at(ii, j), b = p.Bmat.at(ii, j);
                double cxy = x[ii] * y[j];
                double s = stable_sigmoid(cxy * w + b);
                double ds = s * (1.0 - s);
                gp.W.at(ii, j) += gx * cxy * cxy * ds;
                gp.Bmat.at(ii, j) += gx * cxy * ds;
                double cyx = y[ii] * x[j];
                double s2 = stable_sigmoid(cyx * w + b);
                double ds2 = s2 * (1.0 - s2);
                gp.W.at(ii, j) += gy * cyx * cyx * ds2;
                gp.Bmat.at(ii, j) += gy * cyx * ds2;
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct GradSample {
    Vec i, t, a;
    int z = 1;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_coord;
    bool pass = false;
};

namespace detail {

// Extended-precision loss evaluation for the finite-difference oracle.
// Cancellation in L(theta+h) - L(theta-h) would otherwise swamp coordinates
// whose true gradient is near the 1e-8 relative-error floor.
inline long double loss_ld(const ModelParams& shape, const Vec& theta, const GradSample& s,
                           std::size_t perturb, long double delta) {
    const int d = shape.d;
    auto at = [&](std::size_t k) -> long double {
        long double v = theta[k];
        if (k == perturb) v += delta;
        return v;
    };
    const std::size_t block = static_cast<std::size_t>(d) * d;
    const std::size_t pair_stride = 2 * block;
    const std::size_t head_off = static_cast<std::size_t>(shape.stored_pairs()) * pair_stride;
    auto w_at = [&](int pair, int i, int j) {
        std::size_t base = (shape.sharing == SharingMode::PerPair ? pair : 0) * pair_stride;
        return at(base + static_cast<std::size_t>(i) * d + j);
    };
    auto b_at = [&](int pair, int i, int j) {
        std::size_t base = (shape.sharing == SharingMode::PerPair ? pair : 0) * pair_stride + block;
        return at(base + static_cast<std::size_t>(i) * d + j);
    };
    auto sig = [](long double x) -> long double {
        if (x >= 0.0L) return 1.0L / (1.0L + std::exp(-x));
        long double e = std::exp(x);
        return e / (1.0L + e);
    };

    const std::array<std::pair<const Vec*, const Vec*>, kNumPairs> mods = {
        {{&s.i, &s.t}, {&s.i, &s.a}, {&s.t, &s.a}}};
    long double logit = at(head_off + 6 * static_cast<std::size_t>(d));  // head_b
    for (int p = 0; p < kNumPairs; ++p) {
        const Vec& x = *mods[p].first;
        const Vec& y = *mods[p].second;
        std::size_t off = head_off + static_cast<std::size_t>(2) * d * p;
        for (int i = 0; i < d; ++i) {
            long double xh = 0.0L, yh = 0.0L;
            for (int j = 0; j < d; ++j) {
                long double w = w_at(p, i, j), b = b_at(p, i, j);
                long double cxy = static_cast<long double>(x[i]) * y[j];
                xh += sig(cxy * w + b) * cxy;
                long double cyx = static_cast<long double>(y[i]) * x[j];
                yh += sig(cyx * w + b) * cyx;
            }
            logit += at(off + i) * xh + at(off + d + i) * yh;
        }
    }
    long double zhat = sig(logit);
    const long double clamp = 1e-12L;
    if (zhat < clamp) zhat = clamp;
    if (zhat > 1.0L - clamp) zhat = 1.0L - clamp;
    return -(s.z * std::log(zhat) + (1 - s.z) * std::log(1.0L - zhat));
}

}  // namespace detail

// Checks a supplied analytic gradient against central differences; the main
// overload below feeds it the backward() output.
inline GradCheckReport grad_check_against(const ModelParams& params, const GradSample& sample,
                                          const Vec& analytic, double h, double tol) {
    if (params.d > 16) throw DataError("grad_check: d must be <= 16");
    if (h <= 0.0) throw DataError("grad_check: step h must be > 0");
    Vec theta = params.flatten();
    GradCheckReport rep;
    for (std::size_t k = 0; k < theta.size(); ++k) {
        long double lp = detail::loss_ld(params, theta, sample, k, h);
        long double lm = detail::loss_ld(params, theta, sample, k, -static_cast<long double>(h));
        if (!std::isfinite(static_cast<double>(lp)) || !std::isfinite(static_cast<double>(lm)))
            throw InternalError("grad_check: non-finite loss at coordinate " + params.coord_name(k));
        double numeric = static_cast<double>((lp - lm) / (2.0L * h));
        double denom = std::max({std::abs(analytic[k]), std::abs(numeric), 1e-8});
        double rel = std::abs(analytic[k] - numeric) / denom;
        if (rel > rep.max_rel_error) {
            rep.max_rel_error = rel;
            rep.worst_coord = params.coord_name(k);
        }
    }
    rep.pass = rep.max_rel_error <= tol;
    return rep;
}

inline GradCheckReport grad_check(const ModelParams& params, const GradSample& sample, double h,
                                  double tol) {
    ForwardTrace tr = forward(sample.i, sample.t, sample.a, params);
    Vec analytic = backward(tr, sample.i, sample.t, sample.a, sample.z, params).flatten();
    return grad_check_against(params, sample, analytic, h, tol);
}

// ---------------------------------------------------------------------------
// Checkpoint format: JSON envelope with base64 little-endian float64 tensors.

namespace detail {

inline std::string encode_doubles(const Vec& v) {
    return base64_encode(reinterpret_cast<const std::uint8_t*>(v.data()), v.size() * sizeof(double));
}

inline Vec decode_doubles(const std::string& b64, std::size_t expect) {
    std::vector<std::uint8_t> bytes = base64_decode(b64);
    if (bytes.size() != expect * sizeof(double))
        throw DataError("checkpoint tensor has wrong byte length");
    Vec v(expect);
    std::memcpy(v.data(), bytes.data(), bytes.size());
    return v;
}

}  // namespace detail

inline void save_checkpoint(const ModelParams& p, const std::string& path) {
    nlohmann::json tensors;
    auto put = [&](const std::string& name, const std::vector<int>& shape, const Vec& data) {
        tensors[name] = {{"shape", shape}, {"data", detail::encode_doubles(data)}};
    };
    for (int k = 0; k < p.stored_pairs(); ++k) {
        std::string suffix = p.sharing == SharingMode::PerPair ? std::string("_") + kPairNames[k] : "";
        put("W" + suffix, {p.d, p.d}, p.pairs[k].W.a);
        put("B" + suffix, {p.d, p.d}, p.pairs[k].Bmat.a);
    }
    put("head_w", {6 * p.d}, p.head_w);
    put("head_b", {1}, Vec{p.head_b});
    nlohmann::json j;
    j["version"] = 1;
    j["d"] = p.d;
    j["sharing_mode"] = to_string(p.sharing);
    j["tensors"] = tensors;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out << j.dump(2) << "\n";
}

inline ModelParams load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint parse error in " + path + ": " + e.what());
    }
    if (j.value("version", 0) != 1) throw DataError("unsupported checkpoint version in " + path);
    ModelParams p;
    p.d = j.at("d").get<int>();
    p.sharing = sharing_mode_from_string(j.at("sharing_mode").get<std::string>());
    p.pairs.assign(p.sharing == SharingMode::PerPair ? kNumPairs : 1, PairAttentionParams(p.d));
    const auto& tensors = j.at("tensors");
    auto get = [&](const std::string& name, std::size_t expect) {
        if (!tensors.contains(name)) throw DataError("checkpoint missing tensor: " + name);
        return detail::decode_doubles(tensors[name].at("data").get<std::string>(), expect);
    };
    std::size_t block = static_cast<std::size_t>(p.d) * p.d;
    for (int k = 0; k < p.stored_pairs(); ++k) {
        std::string suffix = p.sharing == SharingMode::PerPair ? std::string("_") + kPairNames[k] : "";
        p.pairs[k].W.a = get("W" + suffix, block);
        p.pairs[k].W.n = p.d;
        p.pairs[k].Bmat.a = get("B" + suffix, block);
        p.pairs[k].Bmat.n = p.d;
    }
    p.head_w = get("head_w", static_cast<std::size_t>(6) * p.d);
    p.head_b = get("head_b", 1)[0];
    return p;
}

}  // namespace mmcar
