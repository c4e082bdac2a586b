#include "crispedge/autograd.hpp"

#include <algorithm>
#include <cmath>

#include "crispedge/errors.hpp"

namespace crispedge {

Parameter::Parameter(std::string name_, Tensor init, bool decay_)
    : name(std::move(name_)),
      value(std::move(init)),
      grad(value.shape()),
      velocity(value.shape()),
      decay(decay_) {}

const Tensor& Var::value() const { return graph->value(*this); }

Var Graph::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::parameter(Parameter& p) {
  Node node;
  node.value = p.value;
  node.param = &p;
  node.requires_grad = p.requires_grad;
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::record(Tensor value, std::vector<Var> inputs, BackwardFn fn) {
  Node node;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (Var v : inputs) {
    check(v);
    node.inputs.push_back(v.id);
    node.requires_grad = node.requires_grad || nodes_[v.id].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

const Tensor& Graph::value(Var v) const {
  check(v);
  return nodes_[v.id].value;
}

bool Graph::requires_grad(Var v) const {
  check(v);
  return nodes_[v.id].requires_grad;
}

void Graph::check(Var v) const {
  if (v.graph != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw ContractError("variable does not belong to this graph");
  }
}

void Graph::backward(Var loss) {
  check(loss);
  if (nodes_[loss.id].value.size() != 1) {
    throw ContractError("backward() needs a 1-element loss, got shape " +
                        nodes_[loss.id].value.shape().str());
  }
  for (Node& n : nodes_) n.grad = Tensor();
  nodes_[loss.id].grad = Tensor(nodes_[loss.id].value.shape(), 1.0);

  std::vector<Tensor*> slots;
  for (int id = loss.id; id >= 0; --id) {
    Node& node = nodes_[id];
    if (!node.requires_grad || node.grad.size() == 0) continue;
    if (node.param != nullptr) {
      Parameter& p = *node.param;
      if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
      for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += node.grad[i];
      continue;
    }
    if (!node.backward) continue;
    slots.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      Node& in = nodes_[node.inputs[k]];
      if (!in.requires_grad) continue;
      if (in.grad.size() == 0) in.grad = Tensor(in.value.shape());
      slots[k] = &in.grad;
    }
    node.backward(node.value, node.grad, slots);
  }
}

namespace {

void same_graph(Var a, Var b) {
  if (a.graph != b.graph) throw ContractError("variables belong to different graphs");
}

// Smallest v with v * s >= num (s > 0), for possibly negative num.
int ceil_div(int num, int s) { return num >= 0 ? (num + s - 1) / s : -((-num) / s); }
int floor_div(int num, int s) { return num >= 0 ? num / s : -((-num + s - 1) / s); }

struct ConvGeometry {
  int oh = 0;
  int ow = 0;
};

ConvGeometry conv_geometry(const Shape& in, const Shape& k, int stride, int padding) {
  if (stride <= 0 || padding < 0) {
    throw ShapeError("conv2d: stride must be positive and padding non-negative");
  }
  if (in.c != k.c) {
    throw ShapeError("conv2d: input has " + std::to_string(in.c) + " channels, kernel expects " +
                     std::to_string(k.c));
  }
  const int span_h = in.h + 2 * padding - k.h;
  const int span_w = in.w + 2 * padding - k.w;
  if (span_h < 0 || span_w < 0) {
    throw ShapeError("conv2d: kernel " + k.str() + " larger than padded input " + in.str());
  }
  ConvGeometry g{span_h / stride + 1, span_w / stride + 1};
  if (g.oh <= 0 || g.ow <= 0) throw ShapeError("conv2d: non-positive output size");
  return g;
}

// Valid output range [lo, hi] for kernel tap `k` along one axis.
std::pair<int, int> tap_range(int k, int stride, int padding, int in_size, int out_size) {
  const int lo = std::max(0, ceil_div(padding - k, stride));
  const int hi = std::min(out_size - 1, floor_div(in_size - 1 + padding - k, stride));
  return {lo, hi};
}

void conv_backward(const Tensor& x, const Tensor& k, int stride, int padding, const Tensor& g,
                   Tensor* dx, Tensor* dk) {
  const Shape& in = x.shape();
  const Shape& ks = k.shape();
  const Shape& os = g.shape();
  for (int n = 0; n < in.n; ++n) {
    for (int o = 0; o < ks.n; ++o) {
      const double* gp = g.plane(n, o);
      for (int i = 0; i < in.c; ++i) {
        const double* xp = x.plane(n, i);
        double* dxp = dx != nullptr ? dx->plane(n, i) : nullptr;
        for (int ky = 0; ky < ks.h; ++ky) {
          const auto [oy_lo, oy_hi] = tap_range(ky, stride, padding, in.h, os.h);
          for (int kx = 0; kx < ks.w; ++kx) {
            const auto [ox_lo, ox_hi] = tap_range(kx, stride, padding, in.w, os.w);
            if (oy_lo > oy_hi || ox_lo > ox_hi) continue;
            const double w = k.at(o, i, ky, kx);
            double acc = 0.0;
            for (int oy = oy_lo; oy <= oy_hi; ++oy) {
              const int iy = oy * stride + ky - padding;
              const double* grow = gp + static_cast<std::size_t>(oy) * os.w;
              const double* xrow = xp + static_cast<std::size_t>(iy) * in.w + (kx - padding);
              if (stride == 1) {
                if (dk != nullptr) {
                  for (int ox = ox_lo; ox <= ox_hi; ++ox) acc += grow[ox] * xrow[ox];
                }
                if (dxp != nullptr) {
                  double* drow = dxp + static_cast<std::size_t>(iy) * in.w + (kx - padding);
                  for (int ox = ox_lo; ox <= ox_hi; ++ox) drow[ox] += w * grow[ox];
                }
              } else {
                for (int ox = ox_lo; ox <= ox_hi; ++ox) {
                  if (dk != nullptr) acc += grow[ox] * xrow[ox * stride];
                  if (dxp != nullptr) {
                    dxp[static_cast<std::size_t>(iy) * in.w + ox * stride + kx - padding] += w * grow[ox];
                  }
                }
              }
            }
            if (dk != nullptr) dk->at(o, i, ky, kx) += acc;
          }
        }
      }
    }
  }
}

struct Tap {
  int i0 = 0;
  int i1 = 0;
  double w0 = 1.0;
  double w1 = 0.0;
};

std::vector<Tap> resize_taps(int in_size, int out_size) {
  std::vector<Tap> taps(out_size);
  const double ratio = static_cast<double>(in_size) / out_size;
  for (int d = 0; d < out_size; ++d) {
    double src = (d + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in_size - 1));
    Tap t;
    t.i0 = static_cast<int>(std::floor(src));
    t.i1 = std::min(t.i0 + 1, in_size - 1);
    t.w1 = src - t.i0;
    t.w0 = 1.0 - t.w1;
    taps[d] = t;
  }
  return taps;
}

template <typename F, typename DF>
Var unary(Var x, F f, DF df) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  const Tensor* xp = &xv;
  return x.graph->record(std::move(out), {x},
                         [xp, df](const Tensor& y, const Tensor& g, std::span<Tensor* const> dx) {
                           Tensor& d = *dx[0];
                           for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * df((*xp)[i], y[i]);
                         });
}

// Shape rule shared by mul/div: same shape, or b holds one element.
bool broadcast_scalar(const Tensor& a, const Tensor& b, const char* what) {
  if (b.size() == 1 && a.size() != 1) return true;
  require_same_shape(a.shape(), b.shape(), what);
  return false;
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, const Tensor& k, int stride, int padding) {
  const Shape& in = x.shape();
  const Shape& ks = k.shape();
  const ConvGeometry geo = conv_geometry(in, ks, stride, padding);
  Tensor out(Shape{in.n, ks.n, geo.oh, geo.ow});
  for (int n = 0; n < in.n; ++n) {
    for (int o = 0; o < ks.n; ++o) {
      double* op = out.plane(n, o);
      for (int i = 0; i < in.c; ++i) {
        const double* xp = x.plane(n, i);
        for (int ky = 0; ky < ks.h; ++ky) {
          const auto [oy_lo, oy_hi] = tap_range(ky, stride, padding, in.h, geo.oh);
          for (int kx = 0; kx < ks.w; ++kx) {
            const auto [ox_lo, ox_hi] = tap_range(kx, stride, padding, in.w, geo.ow);
            const double w = k.at(o, i, ky, kx);
            for (int oy = oy_lo; oy <= oy_hi; ++oy) {
              const int iy = oy * stride + ky - padding;
              double* orow = op + static_cast<std::size_t>(oy) * geo.ow;
              const double* xrow = xp + static_cast<std::size_t>(iy) * in.w + (kx - padding);
              if (stride == 1) {
                for (int ox = ox_lo; ox <= ox_hi; ++ox) orow[ox] += w * xrow[ox];
              } else {
                for (int ox = ox_lo; ox <= ox_hi; ++ox) orow[ox] += w * xrow[ox * stride];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

Var conv2d(Var input, Var kernel, int stride, int padding) {
  same_graph(input, kernel);
  const Tensor* xp = &input.value();
  const Tensor* kp = &kernel.value();
  Tensor out = conv2d_forward(*xp, *kp, stride, padding);
  return input.graph->record(
      std::move(out), {input, kernel},
      [xp, kp, stride, padding](const Tensor&, const Tensor& g, std::span<Tensor* const> d) {
        conv_backward(*xp, *kp, stride, padding, g, d[0], d[1]);
      });
}

Tensor bilinear_resize_forward(const Tensor& x, int target_h, int target_w) {
  if (target_h < 1 || target_w < 1) {
    throw ShapeError("bilinear_resize: target size must be at least 1x1");
  }
  const Shape& in = x.shape();
  if (in.h == target_h && in.w == target_w) return x;
  const std::vector<Tap> ty = resize_taps(in.h, target_h);
  const std::vector<Tap> tx = resize_taps(in.w, target_w);
  Tensor out(Shape{in.n, in.c, target_h, target_w});
  for (int n = 0; n < in.n; ++n) {
    for (int c = 0; c < in.c; ++c) {
      const double* src = x.plane(n, c);
      double* dst = out.plane(n, c);
      for (int y = 0; y < target_h; ++y) {
        const Tap& a = ty[y];
        const double* r0 = src + static_cast<std::size_t>(a.i0) * in.w;
        const double* r1 = src + static_cast<std::size_t>(a.i1) * in.w;
        for (int xo = 0; xo < target_w; ++xo) {
          const Tap& b = tx[xo];
          const double top = b.w0 * r0[b.i0] + b.w1 * r0[b.i1];
          const double bottom = b.w0 * r1[b.i0] + b.w1 * r1[b.i1];
          dst[static_cast<std::size_t>(y) * target_w + xo] = a.w0 * top + a.w1 * bottom;
        }
      }
    }
  }
  return out;
}

Var bilinear_resize(Var input, int target_h, int target_w) {
  const Shape in = input.shape();
  Tensor out = bilinear_resize_forward(input.value(), target_h, target_w);
  if (in.h == target_h && in.w == target_w) {
    return input.graph->record(std::move(out), {input},
                               [](const Tensor&, const Tensor& g, std::span<Tensor* const> d) {
                                 Tensor& dx = *d[0];
                                 for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
                               });
  }
  return input.graph->record(
      std::move(out), {input},
      [in, target_h, target_w](const Tensor&, const Tensor& g, std::span<Tensor* const> d) {
        const std::vector<Tap> ty = resize_taps(in.h, target_h);
        const std::vector<Tap> tx = resize_taps(in.w, target_w);
        Tensor& dx = *d[0];
        for (int n = 0; n < in.n; ++n) {
          for (int c = 0; c < in.c; ++c) {
            const double* gp = g.plane(n, c);
            double* dp = dx.plane(n, c);
            for (int y = 0; y < target_h; ++y) {
              const Tap& a = ty[y];
              double* r0 = dp + static_cast<std::size_t>(a.i0) * in.w;
              double* r1 = dp + static_cast<std::size_t>(a.i1) * in.w;
              for (int xo = 0; xo < target_w; ++xo) {
                const Tap& b = tx[xo];
                const double v = gp[static_cast<std::size_t>(y) * target_w + xo];
                r0[b.i0] += a.w0 * b.w0 * v;
                r0[b.i1] += a.w0 * b.w1 * v;
                r1[b.i0] += a.w1 * b.w0 * v;
                r1[b.i1] += a.w1 * b.w1 * v;
              }
            }
          }
        }
      });
}

Var add(Var a, Var b) {
  same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av.shape(), bv.shape(), "add");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  return a.graph->record(std::move(out), {a, b},
                         [](const Tensor&, const Tensor& g, std::span<Tensor* const> d) {
                           for (Tensor* t : d) {
                             if (t == nullptr) continue;
                             for (std::size_t i = 0; i < g.size(); ++i) (*t)[i] += g[i];
                           }
                         });
}

Var add_channel_bias(Var input, Var bias) {
  same_graph(input, bias);
  const Tensor& xv = input.value();
  const Tensor& bv = bias.value();
  const Shape& s = xv.shape();
  if (!(bv.shape() == Shape{1, s.c, 1, 1})) {
    throw ShapeError("add_channel_bias: bias " + bv.shape().str() + " does not match input " + s.str());
  }
  Tensor out = xv;
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      double* p = out.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) p[i] += bv[c];
    }
  }
  return input.graph->record(std::move(out), {input, bias},
                             [s, plane](const Tensor&, const Tensor& g, std::span<Tensor* const> d) {
                               if (d[0] != nullptr) {
                                 for (std::size_t i = 0; i < g.size(); ++i) (*d[0])[i] += g[i];
                               }
                               if (d[1] != nullptr) {
                                 for (int n = 0; n < s.n; ++n) {
                                   for (int c = 0; c < s.c; ++c) {
                                     const double* gp = g.plane(n, c);
                                     double acc = 0.0;
                                     for (std::size_t i = 0; i < plane; ++i) acc += gp[i];
                                     (*d[1])[c] += acc;
                                   }
                                 }
                               }
                             });
}

namespace {
thread_local KinkRecorder* active_recorder = nullptr;
}  // namespace

KinkRecorder::KinkRecorder() : previous_(active_recorder) { active_recorder = this; }
KinkRecorder::~KinkRecorder() { active_recorder = previous_; }
KinkRecorder* KinkRecorder::current() { return active_recorder; }

Var relu(Var x) {
  if (KinkRecorder* rec = active_recorder) {
    for (double v : x.value().values()) rec->observe(v > 0.0);
  }
  return unary(
      x, [](double v) { return v < 0.0 ? 0.0 : v; },  // NaN passes through
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var exp(Var x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(Var x) {
  for (double v : x.value().values()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive input " + std::to_string(v));
  }
  return unary(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var square(Var x) {
  return unary(
      x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var scale(Var x, double factor) {
  return unary(
      x, [factor](double v) { return factor * v; }, [factor](double, double) { return factor; });
}

Var add_scalar(Var x, double offset) {
  return unary(
      x, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Var mul(Var a, Var b) {
  same_graph(a, b);
  const Tensor* ap = &a.value();
  const Tensor* bp = &b.value();
  const bool bcast = broadcast_scalar(*ap, *bp, "mul");
  Tensor out(ap->shape());
  for (std::size_t i = 0; i < ap->size(); ++i) out[i] = (*ap)[i] * (*bp)[bcast ? 0 : i];
  return a.graph->record(
      std::move(out), {a, b}, [ap, bp, bcast](const Tensor&, const Tensor& g, std::span<Tensor* const> d) {
        if (d[0] != nullptr) {
          for (std::size_t i = 0; i < g.size(); ++i) (*d[0])[i] += g[i] * (*bp)[bcast ? 0 : i];
        }
        if (d[1] != nullptr) {
          if (bcast) {
            double acc = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * (*ap)[i];
            (*d[1])[0] += acc;
          } else {
            for (std::size_t i = 0; i < g.size(); ++i) (*d[1])[i] += g[i] * (*ap)[i];
          }
        }
      });
}

Var div(Var a, Var b) {
  same_graph(a, b);
  const Tensor* ap = &a.value();
  const Tensor* bp = &b.value();
  const bool bcast = broadcast_scalar(*ap, *bp, "div");
  for (double v : bp->values()) {
    if (v == 0.0) throw DomainError("div: zero denominator");
  }
  Tensor out(ap->shape());
  for (std::size_t i = 0; i < ap->size(); ++i) out[i] = (*ap)[i] / (*bp)[bcast ? 0 : i];
  return a.graph->record(
      std::move(out), {a, b}, [bp, bcast](const Tensor& y, const Tensor& g, std::span<Tensor* const> d) {
        if (d[0] != nullptr) {
          for (std::size_t i = 0; i < g.size(); ++i) (*d[0])[i] += g[i] / (*bp)[bcast ? 0 : i];
        }
        if (d[1] != nullptr) {
          // d(a/b)/db = -(a/b)/b
          if (bcast) {
            double acc = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) acc -= g[i] * y[i] / (*bp)[0];
            (*d[1])[0] += acc;
          } else {
            for (std::size_t i = 0; i < g.size(); ++i) (*d[1])[i] -= g[i] * y[i] / (*bp)[i];
          }
        }
      });
}

Var sum(Var x) {
  const Tensor& xv = x.value();
  double acc = 0.0;
  for (double v : xv.values()) acc += v;
  return x.graph->record(Tensor::scalar(acc), {x},
                         [](const Tensor&, const Tensor& g, std::span<Tensor* const> d) {
                           const double g0 = g[0];
                           for (double& v : d[0]->values()) v += g0;
                         });
}

}  // namespace crispedge
