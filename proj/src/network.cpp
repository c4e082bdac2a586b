#include "crispedge/network.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "crispedge/errors.hpp"

namespace crispedge {

NetworkTopology NetworkTopology::micro_default(int input_channels) {
  NetworkTopology t;
  t.input_channels = input_channels;
  t.encoder_stages = {{8, 1}, {16, 2}, {32, 2}, {64, 2}};
  t.refine_levels = {
      {
          {"r1a", ConnectionKind::skip, {"s1", "s3"}, 0},
          {"r1b", ConnectionKind::skip, {"s2", "s4"}, 0},
          {"r1c", ConnectionKind::adjacent, {"s2", "s3", "s4"}, 0},
      },
      {
          {"r2a", ConnectionKind::adjacent, {"r1a", "r1b", "r1c"}, 0},
      },
  };
  t.validate();
  return t;
}

namespace {

struct SourceInfo {
  int channels = 0;
  int factor = 1;  // downsampling relative to the input image
  int level = 0;   // 0 for encoder stages
};

std::string stage_id(std::size_t i) { return "s" + std::to_string(i + 1); }

const char* kind_name(ConnectionKind k) { return k == ConnectionKind::skip ? "skip" : "adjacent"; }

}  // namespace

void NetworkTopology::validate() {
  if (input_channels < 1) throw TopologyError("input_channels must be >= 1");
  if (encoder_stages.empty()) throw TopologyError("topology needs at least one encoder stage");
  if (refine_levels.empty()) throw TopologyError("topology needs at least one refine level");

  std::map<std::string, SourceInfo> sources;
  int factor = 1;
  for (std::size_t i = 0; i < encoder_stages.size(); ++i) {
    const EncoderStageSpec& s = encoder_stages[i];
    if (s.channels < 1) throw TopologyError("encoder stage " + stage_id(i) + " needs >= 1 channel");
    if (s.stride != 1 && s.stride != 2) throw TopologyError("encoder stage stride must be 1 or 2");
    factor *= s.stride;
    sources[stage_id(i)] = {s.channels, factor, 0};
  }

  for (std::size_t lv = 0; lv < refine_levels.size(); ++lv) {
    if (refine_levels[lv].empty()) throw TopologyError("refine level " + std::to_string(lv + 1) + " is empty");
    std::vector<std::pair<std::string, SourceInfo>> added;
    for (RefineBlockSpec& b : refine_levels[lv]) {
      if (b.id.empty()) throw TopologyError("refine block without id");
      if (sources.count(b.id) != 0) throw TopologyError("duplicate source id '" + b.id + "'");
      if (b.inputs.empty()) throw TopologyError("refine block '" + b.id + "' has no inputs");
      std::vector<SourceInfo> in;
      for (const std::string& src : b.inputs) {
        auto it = sources.find(src);
        if (it == sources.end()) {
          throw TopologyError("refine block '" + b.id + "' references unknown source '" + src + "'");
        }
        in.push_back(it->second);
      }
      for (std::size_t k = 1; k < in.size(); ++k) {
        if (in[k].factor < in[k - 1].factor) {
          throw TopologyError("refine block '" + b.id + "': inputs must be listed highest resolution first");
        }
      }
      if (b.kind == ConnectionKind::skip) {
        if (in.size() != 2 || in[1].factor != 4 * in[0].factor) {
          throw TopologyError("skip block '" + b.id + "' needs two inputs four times apart in resolution");
        }
      } else {
        if (in.size() > 3) throw TopologyError("adjacent block '" + b.id + "' takes at most three inputs");
        for (std::size_t k = 1; k < in.size(); ++k) {
          if (in[k].factor > 2 * in[k - 1].factor) {
            throw TopologyError("adjacent block '" + b.id + "' inputs must be at adjacent resolutions");
          }
        }
      }
      int min_ch = in.front().channels;
      int level = 0;
      for (const SourceInfo& s : in) {
        min_ch = std::min(min_ch, s.channels);
        level = std::max(level, s.level);
      }
      if (b.out_channels == 0) b.out_channels = min_ch;
      if (b.out_channels != min_ch) {
        throw TopologyError("refine block '" + b.id + "' out_channels must equal the smallest input (" +
                            std::to_string(min_ch) + ")");
      }
      if (level != static_cast<int>(lv)) {
        throw TopologyError("refine block '" + b.id + "' must consume the previous level");
      }
      added.emplace_back(b.id, SourceInfo{b.out_channels, in.front().factor, static_cast<int>(lv) + 1});
    }
    // Blocks become visible to later levels only.
    for (auto& [id, info] : added) sources[id] = info;
  }

  const std::vector<RefineBlockSpec>& last = refine_levels.back();
  int best = sources.at(last.front().id).factor;
  for (const RefineBlockSpec& b : last) best = std::min(best, sources.at(b.id).factor);
  if (best != 1) throw TopologyError("the final refine level must produce a full-resolution output");
}

std::string NetworkTopology::stages_string() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < encoder_stages.size(); ++i) {
    if (i != 0) os << ',';
    os << encoder_stages[i].channels << '/' << encoder_stages[i].stride;
  }
  return os.str();
}

std::string NetworkTopology::refine_string() const {
  std::ostringstream os;
  for (std::size_t lv = 0; lv < refine_levels.size(); ++lv) {
    if (lv != 0) os << " | ";
    for (std::size_t k = 0; k < refine_levels[lv].size(); ++k) {
      const RefineBlockSpec& b = refine_levels[lv][k];
      if (k != 0) os << ' ';
      os << b.id << '=' << kind_name(b.kind) << '(';
      for (std::size_t i = 0; i < b.inputs.size(); ++i) os << (i ? "," : "") << b.inputs[i];
      os << ')';
    }
  }
  return os.str();
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(trim(cur));
  return out;
}

}  // namespace

NetworkTopology NetworkTopology::parse(int input_channels, const std::string& stages, const std::string& refine) {
  NetworkTopology t;
  t.input_channels = input_channels;
  for (const std::string& item : split(stages, ',')) {
    const auto slash = item.find('/');
    if (slash == std::string::npos) throw TopologyError("stage '" + item + "' must be channels/stride");
    try {
      t.encoder_stages.push_back({std::stoi(item.substr(0, slash)), std::stoi(item.substr(slash + 1))});
    } catch (const std::logic_error&) {
      throw TopologyError("stage '" + item + "' is not channels/stride");
    }
  }
  for (const std::string& level : split(refine, '|')) {
    std::vector<RefineBlockSpec> blocks;
    std::istringstream is(level);
    std::string tok;
    while (is >> tok) {
      const auto eq = tok.find('=');
      const auto lp = tok.find('(');
      if (eq == std::string::npos || lp == std::string::npos || lp < eq || tok.back() != ')') {
        throw TopologyError("refine block '" + tok + "' must look like id=kind(src,...)");
      }
      RefineBlockSpec b;
      b.id = tok.substr(0, eq);
      const std::string kind = tok.substr(eq + 1, lp - eq - 1);
      if (kind == "skip") {
        b.kind = ConnectionKind::skip;
      } else if (kind == "adjacent") {
        b.kind = ConnectionKind::adjacent;
      } else {
        throw TopologyError("unknown connection kind '" + kind + "'");
      }
      b.inputs = split(tok.substr(lp + 1, tok.size() - lp - 2), ',');
      blocks.push_back(std::move(b));
    }
    t.refine_levels.push_back(std::move(blocks));
  }
  t.validate();
  return t;
}

Var weight_conv_forward(WeightConvLayer& layer, Var x) {
  Graph& g = *x.graph;
  Var response = relu(conv2d(x, g.parameter(layer.kernel), 1, 1));
  return mul(response, sigmoid(g.parameter(layer.alpha)));
}

Var refine_block_forward(RefineBlock& block, std::span<const Var> inputs) {
  if (inputs.empty()) throw ContractError("refine block '" + block.spec.id + "' got no inputs");
  if (inputs.size() != block.projections.size()) {
    throw ContractError("refine block '" + block.spec.id + "' expects " +
                        std::to_string(block.projections.size()) + " inputs");
  }
  Graph& g = *inputs.front().graph;
  const int h = inputs.front().shape().h;
  const int w = inputs.front().shape().w;
  Var fused;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Var x = inputs[i];
    if (block.has_projection[i]) x = conv2d(x, g.parameter(block.projections[i]), 1, 0);
    if (x.shape().c != block.spec.out_channels) {
      throw ShapeError("refine block '" + block.spec.id + "': input " + std::to_string(i) + " has " +
                       std::to_string(x.shape().c) + " channels");
    }
    x = bilinear_resize(x, h, w);
    fused = i == 0 ? x : add(fused, x);
  }
  return weight_conv_forward(block.conv, fused);
}

namespace {

Tensor uniform_kernel(Shape s, std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(s.c) * s.h * s.w;
  const double a = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> u(-a, a);
  Tensor t(s);
  for (double& v : t.values()) v = u(rng);
  return t;
}

}  // namespace

MicroDrnet::MicroDrnet(NetworkTopology topology, std::uint64_t seed) : topology_(std::move(topology)) {
  topology_.validate();
  std::mt19937_64 rng(seed);

  std::map<std::string, int> channels;
  std::map<std::string, int> factors;
  int factor = 1;
  int in_ch = topology_.input_channels;
  for (std::size_t i = 0; i < topology_.encoder_stages.size(); ++i) {
    const EncoderStageSpec& s = topology_.encoder_stages[i];
    const std::string id = stage_id(i);
    EncoderLayer layer;
    layer.kernel = Parameter(id + ".kernel", uniform_kernel(Shape{s.channels, in_ch, 3, 3}, rng));
    layer.bias = Parameter(id + ".bias", Tensor(Shape{1, s.channels, 1, 1}), false);
    layer.stride = s.stride;
    encoder_.push_back(std::move(layer));
    channels[id] = s.channels;
    factor *= s.stride;
    factors[id] = factor;
    in_ch = s.channels;
  }

  for (const auto& level : topology_.refine_levels) {
    for (const RefineBlockSpec& spec : level) {
      RefineBlock block;
      block.spec = spec;
      for (std::size_t i = 0; i < spec.inputs.size(); ++i) {
        const int c = channels.at(spec.inputs[i]);
        const bool project = c != spec.out_channels;
        block.has_projection.push_back(project);
        block.projections.push_back(
            project ? Parameter(spec.id + ".proj" + std::to_string(i),
                                uniform_kernel(Shape{spec.out_channels, c, 1, 1}, rng))
                    : Parameter());
      }
      block.conv.kernel =
          Parameter(spec.id + ".kernel", uniform_kernel(Shape{spec.out_channels, spec.out_channels, 3, 3}, rng));
      block.conv.alpha = Parameter(spec.id + ".alpha", Tensor::scalar(0.0), false);
      channels[spec.id] = spec.out_channels;
      factors[spec.id] = factors.at(spec.inputs.front());
      blocks_.push_back(std::move(block));
    }
  }

  // Head consumes the first full-resolution block of the last level.
  const std::size_t first_last = blocks_.size() - topology_.refine_levels.back().size();
  head_block_ = first_last;
  for (std::size_t k = first_last; k < blocks_.size(); ++k) {
    if (factors.at(blocks_[k].spec.id) == 1) {
      head_block_ = k;
      break;
    }
  }
  const int head_in = blocks_[head_block_].spec.out_channels;
  head_kernel_ = Parameter("head.kernel", uniform_kernel(Shape{1, head_in, 1, 1}, rng));
  head_bias_ = Parameter("head.bias", Tensor(Shape{1, 1, 1, 1}), false);
}

Var MicroDrnet::forward(Graph& g, Var image) {
  if (image.shape().c != topology_.input_channels) {
    throw ShapeError("network expects " + std::to_string(topology_.input_channels) + " input channels, got " +
                     std::to_string(image.shape().c));
  }
  std::map<std::string, Var> features;
  Var x = image;
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    EncoderLayer& layer = encoder_[i];
    x = relu(add_channel_bias(conv2d(x, g.parameter(layer.kernel), layer.stride, 1), g.parameter(layer.bias)));
    features[stage_id(i)] = x;
  }
  for (RefineBlock& block : blocks_) {
    std::vector<Var> inputs;
    inputs.reserve(block.spec.inputs.size());
    for (const std::string& src : block.spec.inputs) inputs.push_back(features.at(src));
    features[block.spec.id] = refine_block_forward(block, inputs);
  }
  Var top = features.at(blocks_[head_block_].spec.id);
  Var logits = add_channel_bias(conv2d(top, g.parameter(head_kernel_), 1, 0), g.parameter(head_bias_));
  if (logits.shape().h != image.shape().h || logits.shape().w != image.shape().w) {
    throw ShapeError("head output " + logits.shape().str() + " does not match input " + image.shape().str());
  }
  return sigmoid(logits);
}

std::vector<Parameter*> MicroDrnet::parameters() {
  std::vector<Parameter*> out;
  for (EncoderLayer& l : encoder_) {
    out.push_back(&l.kernel);
    out.push_back(&l.bias);
  }
  for (RefineBlock& b : blocks_) {
    for (std::size_t i = 0; i < b.projections.size(); ++i) {
      if (b.has_projection[i]) out.push_back(&b.projections[i]);
    }
    out.push_back(&b.conv.kernel);
    out.push_back(&b.conv.alpha);
  }
  out.push_back(&head_kernel_);
  out.push_back(&head_bias_);
  return out;
}

std::vector<const Parameter*> MicroDrnet::parameters() const {
  std::vector<const Parameter*> out;
  for (Parameter* p : const_cast<MicroDrnet*>(this)->parameters()) out.push_back(p);
  return out;
}

std::size_t MicroDrnet::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->value.size();
  return n;
}

Tensor pack_parameters(const MicroDrnet& net) {
  std::vector<double> values;
  values.reserve(net.parameter_count());
  for (const Parameter* p : net.parameters()) values.insert(values.end(), p->value.values().begin(), p->value.values().end());
  const int n = static_cast<int>(values.size());
  return Tensor(Shape{1, 1, 1, n}, std::move(values));
}

void unpack_parameters(MicroDrnet& net, const Tensor& packed) {
  if (packed.size() != net.parameter_count()) {
    throw ValidationError("parameter blob holds " + std::to_string(packed.size()) + " values, the network needs " +
                          std::to_string(net.parameter_count()));
  }
  std::size_t k = 0;
  for (Parameter* p : net.parameters()) {
    for (double& v : p->value.values()) v = packed[k++];
  }
}

void ScaleSet::validate() const {
  if (scales.empty()) throw ContractError("scale set is empty");
  for (double s : scales) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ContractError("scales must be positive");
  }
}

ProbabilityMap predict(MicroDrnet& net, const Tensor& image) {
  if (image.shape().n != 1) throw ContractError("predict expects a single-image batch");
  Graph g;
  return plane_to_map(net.forward(g, g.constant(image)).value());
}

ProbabilityMap predict_multiscale(MicroDrnet& net, const Tensor& image, const ScaleSet& scales) {
  scales.validate();
  const Shape& s = image.shape();
  if (s.n != 1) throw ContractError("predict_multiscale expects a single-image batch");
  // Check every scale before any forward pass.
  std::vector<std::pair<int, int>> sizes;
  for (double k : scales.scales) {
    const int h = static_cast<int>(std::lround(s.h * k));
    const int w = static_cast<int>(std::lround(s.w * k));
    if (h < 8 || w < 8) {
      throw ContractError("scale " + std::to_string(k) + " shrinks the image below 8 px");
    }
    sizes.emplace_back(h, w);
  }
  Tensor acc(Shape{1, 1, s.h, s.w});
  for (const auto& [h, w] : sizes) {
    Tensor scaled = bilinear_resize_forward(image, h, w);
    Graph g;
    const Tensor& p = net.forward(g, g.constant(std::move(scaled))).value();
    Tensor back = bilinear_resize_forward(p, s.h, s.w);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += back[i];
  }
  const double n = static_cast<double>(sizes.size());
  for (double& v : acc.values()) v /= n;
  return plane_to_map(acc);
}

}  // namespace crispedge
