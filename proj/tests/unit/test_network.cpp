#include <cmath>
#include <map>
#include <random>

#include "crispedge/errors.hpp"
#include "crispedge/losses.hpp"
#include "crispedge/network.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace crispedge;

namespace {

double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Tensor identity_kernel(int channels) {
  Tensor k(Shape{channels, channels, 3, 3});
  for (int c = 0; c < channels; ++c) k.at(c, c, 1, 1) = 1.0;
  return k;
}

Tensor relu_ref(Tensor t) {
  for (double& v : t.values()) v = std::max(v, 0.0);
  return t;
}

Tensor resize_ref(const Tensor& t, int h, int w) {
  const Shape& s = t.shape();
  Tensor out(Shape{s.n, s.c, h, w});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(n, c, y, x) = oracle::bilinear_at(t, n, c, h, w, y, x);
  return out;
}

Tensor bias_ref(Tensor t, const Tensor& b) {
  const Shape& s = t.shape();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) t.at(n, c, y, x) += b[c];
  return t;
}

/// Whole-network forward written against the loop oracles only.
Tensor oracle_forward(MicroDrnet& net, const Tensor& image) {
  std::map<std::string, Tensor> feats;
  Tensor x = image;
  for (std::size_t i = 0; i < net.encoder().size(); ++i) {
    auto& l = net.encoder()[i];
    x = relu_ref(bias_ref(oracle::direct_conv(x, l.kernel.value, l.stride, 1), l.bias.value));
    feats["s" + std::to_string(i + 1)] = x;
  }
  std::string last;
  for (auto& b : net.blocks()) {
    Tensor fused;
    int h = 0;
    int w = 0;
    for (std::size_t i = 0; i < b.spec.inputs.size(); ++i) {
      Tensor in = feats.at(b.spec.inputs[i]);
      if (b.has_projection[i]) in = oracle::direct_conv(in, b.projections[i].value, 1, 0);
      if (i == 0) {
        h = in.shape().h;
        w = in.shape().w;
        fused = in;
      } else {
        Tensor up = resize_ref(in, h, w);
        for (std::size_t k = 0; k < fused.size(); ++k) fused[k] += up[k];
      }
    }
    Tensor out = relu_ref(oracle::direct_conv(fused, b.conv.kernel.value, 1, 1));
    const double gate = sigmoid_ref(b.conv.alpha.value[0]);
    for (double& v : out.values()) v *= gate;
    feats[b.spec.id] = out;
  }
  // Default topology: the head reads the single last-level block.
  Tensor top = feats.at(net.blocks().back().spec.id);
  Tensor logits = bias_ref(oracle::direct_conv(top, net.head_kernel().value, 1, 0), net.head_bias().value);
  for (double& v : logits.values()) v = sigmoid_ref(v);
  return logits;
}

void randomize(MicroDrnet& net, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 0.3);
  for (Parameter* p : net.parameters()) {
    if (p->value.size() == 1 || p->name.find("bias") != std::string::npos) {
      for (double& v : p->value.values()) v = n(rng);
    }
  }
}

NetworkTopology random_topology(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> nstages(2, 4);
  std::uniform_int_distribution<int> ch(1, 6);
  std::uniform_int_distribution<int> coin(0, 1);
  NetworkTopology t;
  t.input_channels = ch(rng);
  const int k = nstages(rng);
  for (int i = 0; i < k; ++i) t.encoder_stages.push_back({ch(rng), i == 0 ? 1 : 1 + coin(rng)});
  std::vector<RefineBlockSpec> level1;
  std::uniform_int_distribution<int> nblocks(1, 3);
  const int nb = nblocks(rng);
  for (int b = 0; b < nb; ++b) {
    RefineBlockSpec spec;
    spec.id = "a" + std::to_string(b);
    spec.kind = ConnectionKind::adjacent;
    const int start = b == 0 ? 0 : std::uniform_int_distribution<int>(0, k - 1)(rng);
    const int len = std::uniform_int_distribution<int>(1, std::min(3, k - start))(rng);
    for (int i = start; i < start + len; ++i) spec.inputs.push_back("s" + std::to_string(i + 1));
    level1.push_back(spec);
  }
  RefineBlockSpec top;
  top.id = "top";
  top.inputs = {"a0"};
  t.refine_levels = {level1, {top}};
  t.validate();
  return t;
}

}  // namespace

TEST_CASE("weight conv gate") {
  std::mt19937_64 rng(3);
  WeightConvLayer layer{Parameter("k", oracle::random_tensor(Shape{3, 2, 3, 3}, rng)),
                        Parameter("a", Tensor::scalar(0.0))};
  Tensor x = oracle::random_tensor(Shape{1, 2, 5, 6}, rng);
  Graph g;
  Tensor out = weight_conv_forward(layer, g.constant(x)).value();
  Tensor ref = relu_ref(oracle::direct_conv(x, layer.kernel.value, 1, 1));
  REQUIRE(out.shape() == ref.shape());
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(0.5 * ref[i]).epsilon(1e-14));

  layer.alpha.value[0] = 1.3;
  Graph g2;
  Tensor out2 = weight_conv_forward(layer, g2.constant(x)).value();
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(std::abs(out2[i] - sigmoid_ref(1.3) * ref[i]) < 1e-12);

  WeightConvLayer id{Parameter("k", identity_kernel(2)), Parameter("a", Tensor::scalar(20.0))};
  Tensor pos = oracle::random_tensor(Shape{1, 2, 4, 4}, rng, 0.0, 1.0);
  Graph g3;
  Tensor pass = weight_conv_forward(id, g3.constant(pos)).value();
  for (std::size_t i = 0; i < pos.size(); ++i) CHECK(std::abs(pass[i] - pos[i]) < 1e-8);

  Graph g4;
  CHECK_THROWS_AS(weight_conv_forward(layer, g4.constant(Tensor(Shape{1, 3, 4, 4}))), ShapeError);
}

TEST_CASE("gate output is non-decreasing in alpha") {
  std::mt19937_64 rng(5);
  WeightConvLayer layer{Parameter("k", oracle::random_tensor(Shape{2, 2, 3, 3}, rng)),
                        Parameter("a", Tensor::scalar(0.0))};
  Tensor x = oracle::random_tensor(Shape{1, 2, 6, 6}, rng);
  Tensor prev;
  for (double a = -8.0; a <= 8.0; a += 0.5) {
    layer.alpha.value[0] = a;
    Graph g;
    Tensor out = weight_conv_forward(layer, g.constant(x)).value();
    if (prev.size() != 0) {
      for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] >= prev[i]);
    }
    prev = out;
  }
}

TEST_CASE("refine block") {
  RefineBlock pass;
  pass.spec = {"b", ConnectionKind::adjacent, {"s1"}, 2};
  pass.projections.emplace_back();
  pass.has_projection.push_back(false);
  pass.conv = {Parameter("k", identity_kernel(2)), Parameter("a", Tensor::scalar(20.0))};
  std::mt19937_64 rng(9);
  Tensor x = oracle::random_tensor(Shape{1, 2, 6, 6}, rng, 0.0, 1.0);
  {
    Graph g;
    Var in = g.constant(x);
    Tensor out = refine_block_forward(pass, std::span<const Var>(&in, 1)).value();
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(out[i] - x[i]) < 1e-8);
  }

  RefineBlock two = pass;
  two.spec.inputs = {"s1", "s2"};
  two.projections.emplace_back();
  two.has_projection.push_back(false);
  {
    Graph g;
    std::vector<Var> in{g.constant(Tensor(Shape{1, 2, 8, 10}, 0.25)), g.constant(Tensor(Shape{1, 2, 4, 5}, 0.5))};
    Tensor out = refine_block_forward(two, in).value();
    CHECK(out.shape() == Shape{1, 2, 8, 10});
    // Identity conv keeps the pre-conv sum, except zero padding at the border.
    for (int y = 1; y < 7; ++y)
      for (int xx = 1; xx < 9; ++xx) CHECK(std::abs(out.at(0, 1, y, xx) - 0.75) < 1e-8);
  }
  {
    Graph g;
    std::vector<Var> none;
    CHECK_THROWS_AS(refine_block_forward(two, none), ContractError);
  }
}

TEST_CASE("topology validation") {
  NetworkTopology t = NetworkTopology::micro_default();
  CHECK(t.stages_string() == "8/1,16/2,32/2,64/2");
  CHECK(t.refine_string() == "r1a=skip(s1,s3) r1b=skip(s2,s4) r1c=adjacent(s2,s3,s4) | r2a=adjacent(r1a,r1b,r1c)");
  NetworkTopology back = NetworkTopology::parse(3, t.stages_string(), t.refine_string());
  CHECK(back.refine_string() == t.refine_string());
  CHECK(back.refine_levels[1][0].out_channels == 8);
  CHECK(back.refine_levels[0][1].out_channels == 16);

  CHECK_THROWS_AS(NetworkTopology::parse(3, "8/1,16/2", "a=adjacent(s1,s9)"), TopologyError);
  CHECK_THROWS_AS(NetworkTopology::parse(3, "8/1,16/2", "a=adjacent(s1) | b=adjacent(zz)"), TopologyError);
  // Same-level references are not allowed.
  CHECK_THROWS_AS(NetworkTopology::parse(3, "8/1,16/2", "a=adjacent(s1) b=adjacent(a)"), TopologyError);
  CHECK_THROWS_AS(NetworkTopology::parse(3, "8/1,16/2,32/2", "a=skip(s1,s2)"), TopologyError);
  CHECK_THROWS_AS(NetworkTopology::parse(3, "8/1,16/2,32/2", "a=adjacent(s1,s3)"), TopologyError);
  CHECK_THROWS_AS(NetworkTopology::parse(3, "8/1,16/2,32/2", "a=adjacent(s2,s1)"), TopologyError);
  CHECK_THROWS_AS(NetworkTopology::parse(3, "8/1,16/2", "a=adjacent(s2)"), TopologyError);
  CHECK_THROWS_AS(NetworkTopology::parse(3, "8/3", "a=adjacent(s1)"), TopologyError);
  CHECK_THROWS_AS(NetworkTopology::parse(3, "8/1", "a=fuse(s1)"), TopologyError);
  CHECK_THROWS_AS(MicroDrnet(NetworkTopology{3, {{8, 1}}, {{{"a", ConnectionKind::adjacent, {"q"}, 0}}}}, 1),
                  TopologyError);
}

TEST_CASE("parameter count matches shape arithmetic") {
  MicroDrnet net(NetworkTopology::micro_default(), 1);
  auto conv = [](int out, int in, int k) { return static_cast<std::size_t>(out) * in * k * k; };
  const std::size_t encoder = conv(8, 3, 3) + 8 + conv(16, 8, 3) + 16 + conv(32, 16, 3) + 32 + conv(64, 32, 3) + 64;
  const std::size_t r1a = conv(8, 32, 1) + conv(8, 8, 3) + 1;
  const std::size_t r1b = conv(16, 64, 1) + conv(16, 16, 3) + 1;
  const std::size_t r1c = conv(16, 32, 1) + conv(16, 64, 1) + conv(16, 16, 3) + 1;
  const std::size_t r2a = 2 * conv(8, 16, 1) + conv(8, 8, 3) + 1;
  const std::size_t head = conv(1, 8, 1) + 1;
  CHECK(net.parameter_count() == encoder + r1a + r1b + r1c + r2a + head);
  CHECK(net.parameter_count() == 33373);
}

TEST_CASE("forward shape, range and determinism") {
  MicroDrnet net(NetworkTopology::micro_default(), 7);
  std::mt19937_64 rng(1);
  Tensor image = oracle::random_tensor(Shape{1, 3, 64, 64}, rng, 0.0, 1.0);
  ProbabilityMap a = predict(net, image);
  CHECK(a.rows() == 64);
  CHECK(a.cols() == 64);
  for (double v : a.values()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  CHECK(predict(net, image) == a);
  MicroDrnet twin(NetworkTopology::micro_default(), 7);
  CHECK(predict(twin, image) == a);
  MicroDrnet other(NetworkTopology::micro_default(), 8);
  CHECK_FALSE(predict(other, image) == a);

  ProbabilityMap zero = predict(net, Tensor(Shape{1, 3, 64, 64}));
  for (double v : zero.values()) CHECK(v == 0.5);

  CHECK_THROWS_AS(predict(net, Tensor(Shape{2, 3, 16, 16})), ContractError);
  CHECK_THROWS_AS(predict(net, Tensor(Shape{1, 1, 16, 16})), ShapeError);
}

TEST_CASE("forward matches the loop oracle") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    MicroDrnet net(NetworkTopology::micro_default(), seed);
    std::mt19937_64 rng(seed + 100);
    randomize(net, rng);
    Tensor image = oracle::random_tensor(Shape{1, 3, 24, 20}, rng);
    ProbabilityMap got = predict(net, image);
    Tensor ref = oracle_forward(net, image);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(got[i] - ref[i]) < 1e-12);
  }
}

TEST_CASE("every block output matches its finest input") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    NetworkTopology t = random_topology(rng);
    MicroDrnet net(t, trial);
    const int h = std::uniform_int_distribution<int>(8, 20)(rng);
    const int w = std::uniform_int_distribution<int>(8, 20)(rng);
    Graph g;
    Var out = net.forward(g, g.constant(oracle::random_tensor(Shape{1, t.input_channels, h, w}, rng)));
    CHECK(out.shape() == Shape{1, 1, h, w});
  }
}

TEST_CASE("multiscale inference") {
  MicroDrnet net(NetworkTopology::micro_default(), 4);
  std::mt19937_64 rng(2);
  Tensor image = oracle::random_tensor(Shape{1, 3, 32, 24}, rng, 0.0, 1.0);
  CHECK(predict_multiscale(net, image, ScaleSet{{1.0}}) == predict(net, image));

  ProbabilityMap ms = predict_multiscale(net, image, ScaleSet{});
  std::vector<Tensor> per;
  for (auto [h, w] : {std::pair{16, 12}, std::pair{32, 24}, std::pair{64, 48}}) {
    Tensor scaled = resize_ref(image, h, w);
    per.push_back(resize_ref(to_tensor(predict(net, scaled)), 32, 24));
  }
  for (std::size_t i = 0; i < ms.size(); ++i) {
    CHECK(std::abs(ms[i] - (per[0][i] + per[1][i] + per[2][i]) / 3.0) < 1e-12);
  }

  MicroDrnet flat(NetworkTopology::micro_default(), 4);
  flat.head_kernel().value.fill(0.0);
  flat.head_bias().value[0] = std::log(0.3 / 0.7);
  for (double v : predict_multiscale(flat, image, ScaleSet{}).values()) CHECK(std::abs(v - 0.3) < 1e-14);

  CHECK_THROWS_AS(predict_multiscale(net, image, ScaleSet{{0.25}}), ContractError);
  CHECK_THROWS_AS(predict_multiscale(net, image, ScaleSet{{}}), ContractError);
  CHECK_THROWS_AS(predict_multiscale(net, image, ScaleSet{{1.0, -1.0}}), ContractError);
}

TEST_CASE("adaptive loss reaches every parameter") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    MicroDrnet net(NetworkTopology::micro_default(), seed);
    std::mt19937_64 rng(seed * 31 + 1);
    Tensor image = oracle::random_tensor(Shape{1, 3, 32, 32}, rng, 0.0, 1.0);
    Tensor w(Shape{1, 1, 32, 32});
    std::uniform_int_distribution<int> pick(0, 5);
    for (double& v : w.values()) v = pick(rng) == 0 ? 1.0 / 3.0 * (1 + pick(rng) % 3) : 0.0;
    ConsensusWeightMap cw = weight_map_from_values(w);
    AwlState awl;
    Graph g;
    g.backward(adaptive_loss(net.forward(g, g.constant(image)), cw, awl, LossConfig{}));
    std::vector<Parameter*> all = net.parameters();
    for (Parameter* p : awl.parameters()) all.push_back(p);
    for (Parameter* p : all) {
      bool nonzero = false;
      for (double v : p->grad.values()) nonzero = nonzero || v != 0.0;
      INFO(p->name << " seed " << seed);
      CHECK(nonzero);
    }
  }
}

TEST_CASE("full network gradients match central differences") {
  MicroDrnet net(NetworkTopology::micro_default(), 11);
  std::mt19937_64 rng(12);
  randomize(net, rng);
  Tensor image = oracle::random_tensor(Shape{1, 3, 16, 16}, rng, 0.0, 1.0);
  Tensor target = oracle::random_tensor(Shape{1, 1, 16, 16}, rng);
  auto build = [&](Graph& g) { return sum(mul(net.forward(g, g.constant(image)), g.constant(target))); };
  const double err = oracle::max_fd_error(build, net.parameters(), 1e-5, 7);
  CHECK(err < 1e-4);
}
