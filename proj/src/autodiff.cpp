#include "df2am/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "df2am/errors.hpp"
#include "df2am/rng.hpp"

namespace df2am::ad {

// ---- ParamStore -------------------------------------------------------------

ParamStore::Entry& ParamStore::add(const std::string& name, Array value) {
    if (contains(name)) throw ConfigError("duplicate parameter name: " + name);
    Array grad(value.shape(), 0.0);
    index_[name] = entries_.size();
    order_.push_back(name);
    entries_.push_back(Entry{std::move(value), std::move(grad)});
    return entries_.back();
}

ParamStore::Entry& ParamStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return entries_[it->second];
}

const ParamStore::Entry& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return entries_[it->second];
}

std::size_t ParamStore::total_size() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& e : entries_) e.grad.fill(0.0);
}

// ---- Tape -------------------------------------------------------------------

const Array& Var::value() const { return tape_->value(*this); }

Var Tape::constant(Array value) {
    require_finite(value, "constant");
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::param(ParamStore& store, const std::string& name) {
    auto key = std::make_pair(&store, name);
    if (auto it = param_nodes_.find(key); it != param_nodes_.end()) return Var(this, it->second);
    const Array& v = store.value(name);
    require_finite(v, ("parameter " + name).c_str());
    Node n;
    n.value = v;
    n.needs_grad = recording_;
    n.store = &store;
    n.param_name = name;
    nodes_.push_back(std::move(n));
    auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
    param_nodes_[key] = id;
    return Var(this, id);
}

Var Tape::record(Array value, std::initializer_list<Var> inputs, Backward backward, const char* op) {
    require_finite(value, op);
    Node n;
    n.value = std::move(value);
    if (recording_) {
        for (const Var& v : inputs) {
            if (v.tape() != this) throw Error(std::string(op) + ": input belongs to another tape");
            if (nodes_[v.id()].needs_grad) n.needs_grad = true;
        }
        if (n.needs_grad) n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Array& Tape::grad(Var v) {
    Node& n = nodes_[v.id()];
    if (n.grad.empty()) n.grad = Array(n.value.shape(), 0.0);
    return n.grad;
}

void Tape::backward(Var loss) {
    if (!recording_) throw Error("backward on a tape that does not record gradients");
    if (loss.tape() != this) throw Error("backward: loss belongs to another tape");
    if (loss.value().size() != 1) {
        throw ShapeError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
    }
    grad(loss)[0] = 1.0;
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.needs_grad || n.grad.empty()) continue;
        if (n.backward) {
            n.backward(*this, n.grad);
        } else if (n.store != nullptr) {
            Array& target = n.store->grad(n.param_name);
            for (std::size_t i = 0; i < target.size(); ++i) target[i] += n.grad[i];
        }
    }
}

void Tape::note_branch(std::uint64_t decision) {
    signature_ ^= decision + 0x9e3779b97f4a7c15ULL + (signature_ << 6) + (signature_ >> 2);
}

void Tape::note_kink_distance(double distance) { min_kink_ = std::min(min_kink_, distance); }

// ---- helpers ----------------------------------------------------------------

namespace {

Tape& tape_of(Var a, const char* op) {
    if (!a.valid()) throw Error(std::string(op) + ": invalid variable");
    return *a.tape();
}

Tape& tape_of(Var a, Var b, const char* op) {
    Tape& t = tape_of(a, op);
    if (b.tape() != &t) throw Error(std::string(op) + ": inputs belong to different tapes");
    return t;
}

void require_rank(const Array& a, std::size_t rank, const char* op) {
    if (a.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_str(a.shape()));
    }
}

void accumulate(Tape& t, Var v, const Array& g) {
    if (!t.needs_grad(v)) return;
    Array& dst = t.grad(v);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

}  // namespace

// ---- elementwise ------------------------------------------------------------

Var add(Var a, Var b) {
    Tape& t = tape_of(a, b, "add");
    require_same_shape(a.shape(), b.shape(), "add");
    const Array& x = a.value();
    const Array& y = b.value();
    Array z(x.shape());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] + y[i];
    return t.record(std::move(z), {a, b},
                    [a, b](Tape& tp, const Array& g) {
                        accumulate(tp, a, g);
                        accumulate(tp, b, g);
                    },
                    "add");
}

Var sub(Var a, Var b) {
    Tape& t = tape_of(a, b, "sub");
    require_same_shape(a.shape(), b.shape(), "sub");
    const Array& x = a.value();
    const Array& y = b.value();
    Array z(x.shape());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] - y[i];
    return t.record(std::move(z), {a, b},
                    [a, b](Tape& tp, const Array& g) {
                        accumulate(tp, a, g);
                        if (tp.needs_grad(b)) {
                            Array& gb = tp.grad(b);
                            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
                        }
                    },
                    "sub");
}

Var mul(Var a, Var b) {
    Tape& t = tape_of(a, b, "mul");
    require_same_shape(a.shape(), b.shape(), "mul");
    const Array& x = a.value();
    const Array& y = b.value();
    Array z(x.shape());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] * y[i];
    return t.record(std::move(z), {a, b},
                    [a, b](Tape& tp, const Array& g) {
                        const Array& xv = a.value();
                        const Array& yv = b.value();
                        if (tp.needs_grad(a)) {
                            Array& ga = tp.grad(a);
                            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * yv[i];
                        }
                        if (tp.needs_grad(b)) {
                            Array& gb = tp.grad(b);
                            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * xv[i];
                        }
                    },
                    "mul");
}

Var scale(Var a, double s) {
    Tape& t = tape_of(a, "scale");
    const Array& x = a.value();
    Array z(x.shape());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = s * x[i];
    return t.record(std::move(z), {a},
                    [a, s](Tape& tp, const Array& g) {
                        Array& ga = tp.grad(a);
                        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * g[i];
                    },
                    "scale");
}

Var add_scalar(Var a, double s) {
    Tape& t = tape_of(a, "add_scalar");
    const Array& x = a.value();
    Array z(x.shape());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] + s;
    return t.record(std::move(z), {a}, [a](Tape& tp, const Array& g) { accumulate(tp, a, g); }, "add_scalar");
}

Var square(Var a) {
    Tape& t = tape_of(a, "square");
    const Array& x = a.value();
    Array z(x.shape());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] * x[i];
    return t.record(std::move(z), {a},
                    [a](Tape& tp, const Array& g) {
                        const Array& xv = a.value();
                        Array& ga = tp.grad(a);
                        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += 2.0 * xv[i] * g[i];
                    },
                    "square");
}

Var abs(Var a) {
    Tape& t = tape_of(a, "abs");
    const Array& x = a.value();
    Array z(x.shape());
    for (std::size_t i = 0; i < z.size(); ++i) {
        z[i] = std::abs(x[i]);
        t.note_kink_distance(z[i]);
        t.note_branch(x[i] > 0 ? 1 : (x[i] < 0 ? 2 : 3));
    }
    return t.record(std::move(z), {a},
                    [a](Tape& tp, const Array& g) {
                        const Array& xv = a.value();
                        Array& ga = tp.grad(a);
                        for (std::size_t i = 0; i < ga.size(); ++i) {
                            if (xv[i] > 0) ga[i] += g[i];
                            else if (xv[i] < 0) ga[i] -= g[i];
                        }
                    },
                    "abs");
}

namespace {

Var positive_part(Var a, const char* op) {
    Tape& t = tape_of(a, op);
    const Array& x = a.value();
    Array z(x.shape());
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        z[i] = x[i] > 0 ? x[i] : 0.0;
        t.note_kink_distance(std::abs(x[i]));
        bits = bits * 31 + (x[i] > 0 ? 1 : 0);
    }
    t.note_branch(bits);
    return t.record(std::move(z), {a},
                    [a](Tape& tp, const Array& g) {
                        const Array& xv = a.value();
                        Array& ga = tp.grad(a);
                        for (std::size_t i = 0; i < ga.size(); ++i) {
                            if (xv[i] > 0) ga[i] += g[i];
                        }
                    },
                    op);
}

}  // namespace

Var relu(Var a) { return positive_part(a, "relu"); }
Var hinge(Var a) { return positive_part(a, "hinge"); }

Var log(Var a) {
    Tape& t = tape_of(a, "log");
    const Array& x = a.value();
    Array z(x.shape());
    for (std::size_t i = 0; i < z.size(); ++i) {
        if (!(x[i] > 0)) throw NumericalError("numerical overflow in log: non-positive input");
        z[i] = std::log(x[i]);
    }
    return t.record(std::move(z), {a},
                    [a](Tape& tp, const Array& g) {
                        const Array& xv = a.value();
                        Array& ga = tp.grad(a);
                        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] / xv[i];
                    },
                    "log");
}

Var log_clamped(Var a, double floor, std::size_t* clamp_count) {
    Tape& t = tape_of(a, "log_clamped");
    const Array& x = a.value();
    Array z(x.shape());
    for (std::size_t i = 0; i < z.size(); ++i) {
        const bool clamped = !(x[i] > floor);
        if (clamped && clamp_count) ++*clamp_count;
        t.note_branch(clamped ? 7 : 11);
        z[i] = std::log(clamped ? floor : x[i]);
    }
    return t.record(std::move(z), {a},
                    [a, floor](Tape& tp, const Array& g) {
                        const Array& xv = a.value();
                        Array& ga = tp.grad(a);
                        for (std::size_t i = 0; i < ga.size(); ++i) {
                            if (xv[i] > floor) ga[i] += g[i] / xv[i];
                        }
                    },
                    "log_clamped");
}

// ---- shape & reductions -----------------------------------------------------

Var reshape(Var a, Shape shape) {
    Tape& t = tape_of(a, "reshape");
    Array z = a.value().reshaped(std::move(shape));
    return t.record(std::move(z), {a}, [a](Tape& tp, const Array& g) { accumulate(tp, a, g); }, "reshape");
}

Var sum(Var a) {
    Tape& t = tape_of(a, "sum");
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    return t.record(Array::scalar(s), {a},
                    [a](Tape& tp, const Array& g) {
                        Array& ga = tp.grad(a);
                        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
                    },
                    "sum");
}

Var mean(Var a) {
    const double n = static_cast<double>(a.value().size());
    return scale(sum(a), 1.0 / n);
}

Var row_sum(Var a) {
    Tape& t = tape_of(a, "row_sum");
    const Array& x = a.value();
    require_rank(x, 2, "row_sum");
    const std::size_t n = x.dim(0), c = x.dim(1);
    Array z({n});
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += x.at(i, j);
        z[i] = s;
    }
    return t.record(std::move(z), {a},
                    [a, n, c](Tape& tp, const Array& g) {
                        Array& ga = tp.grad(a);
                        for (std::size_t i = 0; i < n; ++i)
                            for (std::size_t j = 0; j < c; ++j) ga.at(i, j) += g[i];
                    },
                    "row_sum");
}

// ---- linear algebra ---------------------------------------------------------

Var matmul(Var a, Var b) {
    Tape& t = tape_of(a, b, "matmul");
    const Array& x = a.value();
    const Array& y = b.value();
    require_rank(x, 2, "matmul");
    require_rank(y, 2, "matmul");
    if (x.dim(1) != y.dim(0)) {
        throw ShapeError("matmul: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
    }
    const std::size_t m = x.dim(0), k = x.dim(1), n = y.dim(1);
    Array z({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double xv = x.at(i, p);
            for (std::size_t j = 0; j < n; ++j) z.at(i, j) += xv * y.at(p, j);
        }
    return t.record(std::move(z), {a, b},
                    [a, b, m, k, n](Tape& tp, const Array& g) {
                        const Array& xv = a.value();
                        const Array& yv = b.value();
                        if (tp.needs_grad(a)) {
                            Array& ga = tp.grad(a);
                            for (std::size_t i = 0; i < m; ++i)
                                for (std::size_t p = 0; p < k; ++p) {
                                    double s = 0.0;
                                    for (std::size_t j = 0; j < n; ++j) s += g.at(i, j) * yv.at(p, j);
                                    ga.at(i, p) += s;
                                }
                        }
                        if (tp.needs_grad(b)) {
                            Array& gb = tp.grad(b);
                            for (std::size_t i = 0; i < m; ++i)
                                for (std::size_t p = 0; p < k; ++p) {
                                    const double xi = xv.at(i, p);
                                    for (std::size_t j = 0; j < n; ++j) gb.at(p, j) += xi * g.at(i, j);
                                }
                        }
                    },
                    "matmul");
}

Var linear(Var x, Var weight, Var bias) {
    Tape& t = tape_of(x, weight, "linear");
    if (bias.tape() != &t) throw Error("linear: inputs belong to different tapes");
    const Array& xv = x.value();
    const Array& w = weight.value();
    const Array& b = bias.value();
    require_rank(xv, 2, "linear");
    require_rank(w, 2, "linear");
    if (xv.dim(1) != w.dim(1) || b.size() != w.dim(0)) {
        throw ShapeError("linear: shape mismatch input " + shape_str(xv.shape()) + " vs weight " +
                         shape_str(w.shape()) + " bias " + shape_str(b.shape()));
    }
    const std::size_t n = xv.dim(0), d = xv.dim(1), out = w.dim(0);
    Array z({n, out});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < out; ++o) {
            double s = b[o];
            for (std::size_t j = 0; j < d; ++j) s += xv.at(i, j) * w.at(o, j);
            z.at(i, o) = s;
        }
    return t.record(std::move(z), {x, weight, bias},
                    [x, weight, bias, n, d, out](Tape& tp, const Array& g) {
                        const Array& xv = x.value();
                        const Array& w = weight.value();
                        if (tp.needs_grad(x)) {
                            Array& gx = tp.grad(x);
                            for (std::size_t i = 0; i < n; ++i)
                                for (std::size_t o = 0; o < out; ++o) {
                                    const double go = g.at(i, o);
                                    for (std::size_t j = 0; j < d; ++j) gx.at(i, j) += go * w.at(o, j);
                                }
                        }
                        if (tp.needs_grad(weight)) {
                            Array& gw = tp.grad(weight);
                            for (std::size_t i = 0; i < n; ++i)
                                for (std::size_t o = 0; o < out; ++o) {
                                    const double go = g.at(i, o);
                                    for (std::size_t j = 0; j < d; ++j) gw.at(o, j) += go * xv.at(i, j);
                                }
                        }
                        if (tp.needs_grad(bias)) {
                            Array& gb = tp.grad(bias);
                            for (std::size_t i = 0; i < n; ++i)
                                for (std::size_t o = 0; o < out; ++o) gb[o] += g.at(i, o);
                        }
                    },
                    "linear");
}

Var add_row(Var x, Var row) {
    Tape& t = tape_of(x, row, "add_row");
    const Array& xv = x.value();
    const Array& r = row.value();
    require_rank(xv, 2, "add_row");
    if (r.size() != xv.dim(1)) {
        throw ShapeError("add_row: shape mismatch " + shape_str(xv.shape()) + " vs " + shape_str(r.shape()));
    }
    const std::size_t n = xv.dim(0), c = xv.dim(1);
    Array z(xv.shape());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) z.at(i, j) = xv.at(i, j) + r[j];
    return t.record(std::move(z), {x, row},
                    [x, row, n, c](Tape& tp, const Array& g) {
                        accumulate(tp, x, g);
                        if (tp.needs_grad(row)) {
                            Array& gr = tp.grad(row);
                            for (std::size_t i = 0; i < n; ++i)
                                for (std::size_t j = 0; j < c; ++j) gr[j] += g.at(i, j);
                        }
                    },
                    "add_row");
}

Var mul_row(Var x, Var row) {
    Tape& t = tape_of(x, row, "mul_row");
    const Array& xv = x.value();
    const Array& r = row.value();
    require_rank(xv, 2, "mul_row");
    if (r.size() != xv.dim(1)) {
        throw ShapeError("mul_row: shape mismatch " + shape_str(xv.shape()) + " vs " + shape_str(r.shape()));
    }
    const std::size_t n = xv.dim(0), c = xv.dim(1);
    Array z(xv.shape());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) z.at(i, j) = xv.at(i, j) * r[j];
    return t.record(std::move(z), {x, row},
                    [x, row, n, c](Tape& tp, const Array& g) {
                        const Array& xv = x.value();
                        const Array& r = row.value();
                        if (tp.needs_grad(x)) {
                            Array& gx = tp.grad(x);
                            for (std::size_t i = 0; i < n; ++i)
                                for (std::size_t j = 0; j < c; ++j) gx.at(i, j) += g.at(i, j) * r[j];
                        }
                        if (tp.needs_grad(row)) {
                            Array& gr = tp.grad(row);
                            for (std::size_t i = 0; i < n; ++i)
                                for (std::size_t j = 0; j < c; ++j) gr[j] += g.at(i, j) * xv.at(i, j);
                        }
                    },
                    "mul_row");
}

Var conv2d(Var x, Var weight, Var bias, std::size_t stride, std::size_t pad) {
    Tape& t = tape_of(x, weight, "conv2d");
    if (bias.tape() != &t) throw Error("conv2d: inputs belong to different tapes");
    const Array& in = x.value();
    const Array& w = weight.value();
    require_rank(in, 4, "conv2d");
    require_rank(w, 4, "conv2d");
    const std::size_t B = in.dim(0), Ci = in.dim(1), H = in.dim(2), W = in.dim(3);
    const std::size_t Co = w.dim(0), k = w.dim(2);
    if (w.dim(1) != Ci || w.dim(3) != k || bias.value().size() != Co || stride == 0) {
        throw ShapeError("conv2d: shape mismatch input " + shape_str(in.shape()) + " vs weight " +
                         shape_str(w.shape()));
    }
    if (H + 2 * pad < k || W + 2 * pad < k) {
        throw ShapeError("conv2d: kernel larger than padded input " + shape_str(in.shape()));
    }
    const std::size_t Ho = (H + 2 * pad - k) / stride + 1;
    const std::size_t Wo = (W + 2 * pad - k) / stride + 1;
    const Array& b = bias.value();
    Array out({B, Co, Ho, Wo});
    const double* ip = in.data().data();
    const double* wp = w.data().data();
    double* op = out.data().data();
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t o = 0; o < Co; ++o)
            for (std::size_t oy = 0; oy < Ho; ++oy)
                for (std::size_t ox = 0; ox < Wo; ++ox) {
                    double s = b[o];
                    for (std::size_t c = 0; c < Ci; ++c)
                        for (std::size_t ky = 0; ky < k; ++ky) {
                            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                                      static_cast<std::ptrdiff_t>(pad);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                                          static_cast<std::ptrdiff_t>(pad);
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                                s += ip[((n * Ci + c) * H + iy) * W + ix] * wp[((o * Ci + c) * k + ky) * k + kx];
                            }
                        }
                    op[((n * Co + o) * Ho + oy) * Wo + ox] = s;
                }
    return t.record(
        std::move(out), {x, weight, bias},
        [=](Tape& tp, const Array& g) {
            const double* ip = x.value().data().data();
            const double* wp = weight.value().data().data();
            const double* gp = g.data().data();
            double* gx = tp.needs_grad(x) ? tp.grad(x).data().data() : nullptr;
            double* gw = tp.needs_grad(weight) ? tp.grad(weight).data().data() : nullptr;
            if (tp.needs_grad(bias)) {
                Array& gb = tp.grad(bias);
                for (std::size_t n = 0; n < B; ++n)
                    for (std::size_t o = 0; o < Co; ++o)
                        for (std::size_t q = 0; q < Ho * Wo; ++q) gb[o] += gp[(n * Co + o) * Ho * Wo + q];
            }
            if (!gx && !gw) return;
            for (std::size_t n = 0; n < B; ++n)
                for (std::size_t o = 0; o < Co; ++o)
                    for (std::size_t oy = 0; oy < Ho; ++oy)
                        for (std::size_t ox = 0; ox < Wo; ++ox) {
                            const double go = gp[((n * Co + o) * Ho + oy) * Wo + ox];
                            if (go == 0.0) continue;
                            for (std::size_t c = 0; c < Ci; ++c)
                                for (std::size_t ky = 0; ky < k; ++ky) {
                                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                                              static_cast<std::ptrdiff_t>(pad);
                                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                                    for (std::size_t kx = 0; kx < k; ++kx) {
                                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                                                  static_cast<std::ptrdiff_t>(pad);
                                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                                        const std::size_t ii = ((n * Ci + c) * H + iy) * W + ix;
                                        const std::size_t wi = ((o * Ci + c) * k + ky) * k + kx;
                                        if (gx) gx[ii] += go * wp[wi];
                                        if (gw) gw[wi] += go * ip[ii];
                                    }
                                }
                        }
        },
        "conv2d");
}

// ---- classification helpers -------------------------------------------------

Var softmax(Var a) {
    Tape& t = tape_of(a, "softmax");
    const Array& x = a.value();
    if (x.rank() != 1 && x.rank() != 2) {
        throw ShapeError("softmax: expected rank 1 or 2, got " + shape_str(x.shape()));
    }
    const std::size_t c = x.shape().back();
    const std::size_t rows = x.size() / c;
    Array y(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data().data() + r * c;
        double* yr = y.data().data() + r * c;
        const double mx = *std::max_element(xr, xr + c);
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            s += yr[j];
        }
        for (std::size_t j = 0; j < c; ++j) yr[j] /= s;
    }
    Array saved = y;
    return t.record(std::move(y), {a},
                    [a, yv = std::move(saved), rows, c](Tape& tp, const Array& g) {
                        Array& ga = tp.grad(a);
                        for (std::size_t r = 0; r < rows; ++r) {
                            double dot = 0.0;
                            for (std::size_t j = 0; j < c; ++j) dot += g[r * c + j] * yv[r * c + j];
                            for (std::size_t j = 0; j < c; ++j) ga[r * c + j] += yv[r * c + j] * (g[r * c + j] - dot);
                        }
                    },
                    "softmax");
}

Var pick(Var x, const std::vector<std::size_t>& index) {
    Tape& t = tape_of(x, "pick");
    const Array& xv = x.value();
    require_rank(xv, 2, "pick");
    const std::size_t n = xv.dim(0), c = xv.dim(1);
    if (index.size() != n) {
        throw ShapeError("pick: " + std::to_string(index.size()) + " indices for shape " + shape_str(xv.shape()));
    }
    Array z({n});
    for (std::size_t i = 0; i < n; ++i) {
        if (index[i] >= c) throw LabelError("pick: index " + std::to_string(index[i]) + " out of range");
        z[i] = xv.at(i, index[i]);
    }
    return t.record(std::move(z), {x},
                    [x, index](Tape& tp, const Array& g) {
                        Array& gx = tp.grad(x);
                        for (std::size_t i = 0; i < index.size(); ++i) gx.at(i, index[i]) += g[i];
                    },
                    "pick");
}

Var slice_rows(Var x, std::size_t begin, std::size_t count) {
    Tape& t = tape_of(x, "slice_rows");
    const Array& xv = x.value();
    if (count == 0 || begin + count > xv.dim(0)) {
        throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of range for " + shape_str(xv.shape()));
    }
    const std::size_t row = xv.size() / xv.dim(0);
    Shape s = xv.shape();
    s[0] = count;
    std::vector<double> data(xv.values().begin() + static_cast<std::ptrdiff_t>(begin * row),
                             xv.values().begin() + static_cast<std::ptrdiff_t>((begin + count) * row));
    return t.record(Array(std::move(s), std::move(data)), {x},
                    [x, begin, row](Tape& tp, const Array& g) {
                        Array& gx = tp.grad(x);
                        for (std::size_t i = 0; i < g.size(); ++i) gx[begin * row + i] += g[i];
                    },
                    "slice_rows");
}

Var concat_rows(Var a, Var b) {
    Tape& t = tape_of(a, b, "concat_rows");
    const Array& x = a.value();
    const Array& y = b.value();
    Shape sx(x.shape().begin() + 1, x.shape().end());
    Shape sy(y.shape().begin() + 1, y.shape().end());
    require_same_shape(sx, sy, "concat_rows");
    Shape s = x.shape();
    s[0] += y.dim(0);
    std::vector<double> data(x.values());
    data.insert(data.end(), y.values().begin(), y.values().end());
    const std::size_t split = x.size();
    return t.record(Array(std::move(s), std::move(data)), {a, b},
                    [a, b, split](Tape& tp, const Array& g) {
                        if (tp.needs_grad(a)) {
                            Array& ga = tp.grad(a);
                            for (std::size_t i = 0; i < split; ++i) ga[i] += g[i];
                        }
                        if (tp.needs_grad(b)) {
                            Array& gb = tp.grad(b);
                            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[split + i];
                        }
                    },
                    "concat_rows");
}

// ---- metric geometry --------------------------------------------------------

Var l2_normalize_rows(Var x, double eps) {
    Tape& t = tape_of(x, "l2_normalize_rows");
    const Array& xv = x.value();
    require_rank(xv, 2, "l2_normalize_rows");
    const std::size_t n = xv.dim(0), d = xv.dim(1);
    Array y(xv.shape());
    Array norms({n});
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += xv.at(i, j) * xv.at(i, j);
        const double nr = std::sqrt(s);
        if (!(nr >= eps)) {
            char buf[96];
            std::snprintf(buf, sizeof(buf), " has norm %.3g below %.3g", nr, eps);
            throw NumericalError("l2_normalize_rows: sample " + std::to_string(i) + buf);
        }
        norms[i] = nr;
        for (std::size_t j = 0; j < d; ++j) y.at(i, j) = xv.at(i, j) / nr;
    }
    Array saved = y;
    return t.record(std::move(y), {x},
                    [x, yv = std::move(saved), norms, n, d](Tape& tp, const Array& g) {
                        Array& gx = tp.grad(x);
                        for (std::size_t i = 0; i < n; ++i) {
                            double dot = 0.0;
                            for (std::size_t j = 0; j < d; ++j) dot += yv.at(i, j) * g.at(i, j);
                            for (std::size_t j = 0; j < d; ++j)
                                gx.at(i, j) += (g.at(i, j) - yv.at(i, j) * dot) / norms[i];
                        }
                    },
                    "l2_normalize_rows");
}

Var pairwise_distance(Var x) {
    Tape& t = tape_of(x, "pairwise_distance");
    const Array& xv = x.value();
    require_rank(xv, 2, "pairwise_distance");
    const std::size_t n = xv.dim(0), d = xv.dim(1);
    Array z({n, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = xv.at(i, k) - xv.at(j, k);
                s += diff * diff;
            }
            z.at(i, j) = z.at(j, i) = std::sqrt(s);
        }
    Array saved = z;
    return t.record(std::move(z), {x},
                    [x, dv = std::move(saved), n, d](Tape& tp, const Array& g) {
                        const Array& xv = x.value();
                        Array& gx = tp.grad(x);
                        for (std::size_t i = 0; i < n; ++i)
                            for (std::size_t j = 0; j < n; ++j) {
                                if (i == j || dv.at(i, j) == 0.0) continue;
                                const double coef = g.at(i, j) / dv.at(i, j);
                                if (coef == 0.0) continue;
                                for (std::size_t k = 0; k < d; ++k) {
                                    const double diff = xv.at(i, k) - xv.at(j, k);
                                    gx.at(i, k) += coef * diff;
                                    gx.at(j, k) -= coef * diff;
                                }
                            }
                    },
                    "pairwise_distance");
}

namespace {

Var masked_row_extreme(Var dvar, const std::vector<bool>& mask, bool want_max, const char* op) {
    Tape& t = tape_of(dvar, op);
    const Array& dv = dvar.value();
    require_rank(dv, 2, op);
    const std::size_t n = dv.dim(0), m = dv.dim(1);
    if (mask.size() != n * m) throw ShapeError(std::string(op) + ": mask size does not match " + shape_str(dv.shape()));
    Array z({n});
    std::vector<std::size_t> arg(n);
    for (std::size_t i = 0; i < n; ++i) {
        bool found = false;
        double best = 0.0, second = 0.0;
        bool has_second = false;
        for (std::size_t j = 0; j < m; ++j) {
            if (!mask[i * m + j]) continue;
            const double v = dv.at(i, j);
            const bool better = want_max ? v > best : v < best;
            if (!found) {
                best = v;
                arg[i] = j;
                found = true;
            } else if (better) {
                second = best;
                has_second = true;
                best = v;
                arg[i] = j;
            } else if (!has_second || (want_max ? v > second : v < second)) {
                second = v;
                has_second = true;
            }
        }
        if (!found) throw ShapeError(std::string(op) + ": row " + std::to_string(i) + " has no selectable entry");
        if (has_second) t.note_kink_distance(std::abs(best - second));
        t.note_branch(arg[i]);
        z[i] = best;
    }
    return t.record(std::move(z), {dvar},
                    [dvar, arg, m](Tape& tp, const Array& g) {
                        Array& gd = tp.grad(dvar);
                        for (std::size_t i = 0; i < arg.size(); ++i) gd[i * m + arg[i]] += g[i];
                    },
                    op);
}

}  // namespace

Var masked_row_max(Var d, const std::vector<bool>& mask) {
    return masked_row_extreme(d, mask, true, "masked_row_max");
}

Var masked_row_min(Var d, const std::vector<bool>& mask) {
    return masked_row_extreme(d, mask, false, "masked_row_min");
}

// ---- pooling ----------------------------------------------------------------

Var spatial_mean(Var x) {
    Tape& t = tape_of(x, "spatial_mean");
    const Array& xv = x.value();
    require_rank(xv, 4, "spatial_mean");
    const std::size_t B = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
    Array z({B, C});
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            double s = 0.0;
            const double* p = xv.data().data() + (n * C + c) * HW;
            for (std::size_t q = 0; q < HW; ++q) s += p[q];
            z.at(n, c) = s / static_cast<double>(HW);
        }
    return t.record(std::move(z), {x},
                    [x, B, C, HW](Tape& tp, const Array& g) {
                        Array& gx = tp.grad(x);
                        const double inv = 1.0 / static_cast<double>(HW);
                        for (std::size_t n = 0; n < B; ++n)
                            for (std::size_t c = 0; c < C; ++c) {
                                const double gv = g.at(n, c) * inv;
                                double* p = gx.data().data() + (n * C + c) * HW;
                                for (std::size_t q = 0; q < HW; ++q) p[q] += gv;
                            }
                    },
                    "spatial_mean");
}

Var band_means(Var x, std::size_t parts) {
    Tape& t = tape_of(x, "band_means");
    const Array& xv = x.value();
    require_rank(xv, 4, "band_means");
    const std::size_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    if (parts == 0 || H % parts != 0) {
        throw ConfigError("band_means: P=" + std::to_string(parts) + " does not divide H=" + std::to_string(H));
    }
    const std::size_t rows = H / parts;
    const double inv = 1.0 / static_cast<double>(rows * W);
    Array z({B, parts, C});
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t p = 0; p < parts; ++p) {
                double s = 0.0;
                for (std::size_t h = p * rows; h < (p + 1) * rows; ++h)
                    for (std::size_t w = 0; w < W; ++w) s += xv[((n * C + c) * H + h) * W + w];
                z[(n * parts + p) * C + c] = s * inv;
            }
    return t.record(std::move(z), {x},
                    [x, B, C, H, W, parts, rows, inv](Tape& tp, const Array& g) {
                        Array& gx = tp.grad(x);
                        for (std::size_t n = 0; n < B; ++n)
                            for (std::size_t c = 0; c < C; ++c)
                                for (std::size_t p = 0; p < parts; ++p) {
                                    const double gv = g[(n * parts + p) * C + c] * inv;
                                    for (std::size_t h = p * rows; h < (p + 1) * rows; ++h)
                                        for (std::size_t w = 0; w < W; ++w) gx[((n * C + c) * H + h) * W + w] += gv;
                                }
                    },
                    "band_means");
}

Var weighted_parts(Var parts, Var weights) {
    Tape& t = tape_of(parts, weights, "weighted_parts");
    const Array& pv = parts.value();
    const Array& wv = weights.value();
    require_rank(pv, 3, "weighted_parts");
    const std::size_t B = pv.dim(0), P = pv.dim(1), C = pv.dim(2);
    if (wv.size() != P) {
        throw ShapeError("weighted_parts: shape mismatch parts " + shape_str(pv.shape()) + " vs weights " +
                         shape_str(wv.shape()));
    }
    Array z({B, C});
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t p = 0; p < P; ++p)
            for (std::size_t c = 0; c < C; ++c) z.at(n, c) += wv[p] * pv[(n * P + p) * C + c];
    return t.record(std::move(z), {parts, weights},
                    [parts, weights, B, P, C](Tape& tp, const Array& g) {
                        const Array& pv = parts.value();
                        const Array& wv = weights.value();
                        if (tp.needs_grad(parts)) {
                            Array& gp = tp.grad(parts);
                            for (std::size_t n = 0; n < B; ++n)
                                for (std::size_t p = 0; p < P; ++p)
                                    for (std::size_t c = 0; c < C; ++c) gp[(n * P + p) * C + c] += wv[p] * g.at(n, c);
                        }
                        if (tp.needs_grad(weights)) {
                            Array& gw = tp.grad(weights);
                            for (std::size_t n = 0; n < B; ++n)
                                for (std::size_t p = 0; p < P; ++p)
                                    for (std::size_t c = 0; c < C; ++c) gw[p] += pv[(n * P + p) * C + c] * g.at(n, c);
                        }
                    },
                    "weighted_parts");
}

// ---- batch normalization ----------------------------------------------------

BatchNormResult batchnorm_train(Var x, Var gamma, Var beta, double eps) {
    Tape& t = tape_of(x, gamma, "batchnorm_train");
    if (beta.tape() != &t) throw Error("batchnorm_train: inputs belong to different tapes");
    const Array& xv = x.value();
    require_rank(xv, 2, "batchnorm_train");
    const std::size_t n = xv.dim(0), c = xv.dim(1);
    if (n < 2) throw ShapeError("batchnorm_train: batch size must be at least 2, got " + std::to_string(n));
    if (gamma.value().size() != c || beta.value().size() != c) {
        throw ShapeError("batchnorm_train: shape mismatch " + shape_str(xv.shape()) + " vs " +
                         shape_str(gamma.value().shape()));
    }
    Array mu({c}), var({c}), inv_std({c});
    for (std::size_t j = 0; j < c; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += xv.at(i, j);
        mu[j] = s / static_cast<double>(n);
        double v = 0.0;
        for (std::size_t i = 0; i < n; ++i) v += (xv.at(i, j) - mu[j]) * (xv.at(i, j) - mu[j]);
        var[j] = v / static_cast<double>(n);
        inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
    }
    Array xhat(xv.shape()), y(xv.shape());
    const Array& gv = gamma.value();
    const Array& bv = beta.value();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            xhat.at(i, j) = (xv.at(i, j) - mu[j]) * inv_std[j];
            y.at(i, j) = gv[j] * xhat.at(i, j) + bv[j];
        }
    Var out = t.record(std::move(y), {x, gamma, beta},
                       [x, gamma, beta, xhat, inv_std, n, c](Tape& tp, const Array& g) {
                           const Array& gv = gamma.value();
                           if (tp.needs_grad(gamma) || tp.needs_grad(beta)) {
                               for (std::size_t j = 0; j < c; ++j) {
                                   double sg = 0.0, sgx = 0.0;
                                   for (std::size_t i = 0; i < n; ++i) {
                                       sg += g.at(i, j);
                                       sgx += g.at(i, j) * xhat.at(i, j);
                                   }
                                   if (tp.needs_grad(gamma)) tp.grad(gamma)[j] += sgx;
                                   if (tp.needs_grad(beta)) tp.grad(beta)[j] += sg;
                               }
                           }
                           if (tp.needs_grad(x)) {
                               Array& gx = tp.grad(x);
                               const double nn = static_cast<double>(n);
                               for (std::size_t j = 0; j < c; ++j) {
                                   double sd = 0.0, sdx = 0.0;
                                   for (std::size_t i = 0; i < n; ++i) {
                                       const double dxh = g.at(i, j) * gv[j];
                                       sd += dxh;
                                       sdx += dxh * xhat.at(i, j);
                                   }
                                   for (std::size_t i = 0; i < n; ++i) {
                                       const double dxh = g.at(i, j) * gv[j];
                                       gx.at(i, j) += inv_std[j] / nn * (nn * dxh - sd - xhat.at(i, j) * sdx);
                                   }
                               }
                           }
                       },
                       "batchnorm_train");
    return BatchNormResult{out, std::move(mu), std::move(var)};
}

Var batchnorm_infer(Var x, Var gamma, Var beta, const Array& mean, const Array& var, double eps) {
    Tape& t = tape_of(x, gamma, "batchnorm_infer");
    if (beta.tape() != &t) throw Error("batchnorm_infer: inputs belong to different tapes");
    const Array& xv = x.value();
    require_rank(xv, 2, "batchnorm_infer");
    const std::size_t n = xv.dim(0), c = xv.dim(1);
    if (gamma.value().size() != c || beta.value().size() != c || mean.size() != c || var.size() != c) {
        throw ShapeError("batchnorm_infer: shape mismatch " + shape_str(xv.shape()) + " vs " +
                         shape_str(gamma.value().shape()));
    }
    Array inv_std({c});
    for (std::size_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
    Array y(xv.shape());
    const Array& gv = gamma.value();
    const Array& bv = beta.value();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) y.at(i, j) = (xv.at(i, j) - mean[j]) * inv_std[j] * gv[j] + bv[j];
    return t.record(std::move(y), {x, gamma, beta},
                    [x, gamma, beta, mean, inv_std, n, c](Tape& tp, const Array& g) {
                        const Array& xv = x.value();
                        const Array& gv = gamma.value();
                        for (std::size_t i = 0; i < n; ++i)
                            for (std::size_t j = 0; j < c; ++j) {
                                const double gij = g.at(i, j);
                                if (tp.needs_grad(x)) tp.grad(x).at(i, j) += gij * gv[j] * inv_std[j];
                                if (tp.needs_grad(gamma)) tp.grad(gamma)[j] += gij * (xv.at(i, j) - mean[j]) * inv_std[j];
                                if (tp.needs_grad(beta)) tp.grad(beta)[j] += gij;
                            }
                    },
                    "batchnorm_infer");
}

// ---- drivers ----------------------------------------------------------------

namespace {

double run(const LossFn& loss_fn, ParamStore& params, bool with_grad, std::uint64_t* signature) {
    Tape tape(with_grad);
    Var loss = loss_fn(tape, params);
    if (loss.value().size() != 1) throw ShapeError("loss must be a scalar, got " + shape_str(loss.shape()));
    const double value = loss.item();
    if (with_grad) tape.backward(loss);
    if (signature) *signature = tape.branch_signature();
    return value;
}

}  // namespace

double forward_backward(const LossFn& loss_fn, ParamStore& params) {
    return run(loss_fn, params, true, nullptr);
}

double evaluate(const LossFn& loss_fn, ParamStore& params) { return run(loss_fn, params, false, nullptr); }

GradCheckResult finite_diff_check(const LossFn& loss_fn, ParamStore& params, double step,
                                  std::size_t sample_count, std::uint64_t seed, double nudge,
                                  std::size_t max_nudges) {
    if (!(step > 0)) throw ConfigError("finite_diff_check: step must be positive");
    if (!(nudge >= 0)) throw ConfigError("finite_diff_check: nudge must be non-negative");
    const std::size_t total = params.total_size();
    if (sample_count == 0 || sample_count > total) {
        throw ConfigError("finite_diff_check: sample_count " + std::to_string(sample_count) +
                          " exceeds parameter count " + std::to_string(total));
    }

    // Flat coordinate -> (parameter, offset) via prefix sums in insertion order.
    std::vector<std::size_t> offsets;
    std::size_t acc = 0;
    for (const auto& name : params.names()) {
        offsets.push_back(acc);
        acc += params.value(name).size();
    }
    std::vector<std::size_t> coords(total);
    std::iota(coords.begin(), coords.end(), 0);
    Rng rng(seed);
    for (std::size_t i = 0; i < sample_count; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng.below(total - i));
        std::swap(coords[i], coords[j]);
    }

    GradCheckResult result;
    for (std::size_t s = 0; s < sample_count; ++s) {
        const std::size_t flat = coords[s];
        const std::size_t p = static_cast<std::size_t>(
            std::upper_bound(offsets.begin(), offsets.end(), flat) - offsets.begin() - 1);
        const std::string& name = params.names()[p];
        const std::size_t idx = flat - offsets[p];
        auto& entry = params.at(name);
        const double orig = entry.value[idx];

        bool crossed = true;
        double analytic = 0.0, numeric = 0.0;
        try {
            for (std::size_t attempt = 0; attempt <= max_nudges && crossed; ++attempt) {
                const double base = orig + static_cast<double>(attempt) * nudge;
                if (attempt > 0) ++result.nudges;
                entry.value[idx] = base;
                params.zero_grad();
                std::uint64_t sig = 0, sig_plus = 0, sig_minus = 0;
                run(loss_fn, params, true, &sig);
                analytic = entry.grad[idx];
                entry.value[idx] = base + step;
                const double f_plus = run(loss_fn, params, false, &sig_plus);
                entry.value[idx] = base - step;
                const double f_minus = run(loss_fn, params, false, &sig_minus);
                crossed = sig_plus != sig || sig_minus != sig;
                numeric = (f_plus - f_minus) / (2.0 * step);
                if (nudge == 0) break;
            }
        } catch (...) {
            entry.value[idx] = orig;
            params.zero_grad();
            throw;
        }
        entry.value[idx] = orig;

        if (crossed) {
            ++result.kink_crossings;
            continue;
        }
        const double diff = std::abs(analytic - numeric);
        const double err = std::abs(analytic) < 1e-8 ? diff : diff / std::abs(analytic);
        ++result.checked;
        if (result.checked == 1 || err > result.max_error) {
            result.max_error = err;
            result.worst_param = name;
            result.worst_index = idx;
            result.worst_analytic = analytic;
            result.worst_numeric = numeric;
        }
    }
    params.zero_grad();
    return result;
}

}  // namespace df2am::ad
