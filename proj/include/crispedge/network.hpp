#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "crispedge/autograd.hpp"
#include "crispedge/grid.hpp"

namespace crispedge {

enum class ConnectionKind { skip, adjacent };

struct EncoderStageSpec {
  int channels = 8;
  int stride = 1;
};

/// One refine block: inputs are stage ids (s1, s2, ...) or ids of blocks in
/// earlier levels, listed highest resolution first.
struct RefineBlockSpec {
  std::string id;
  ConnectionKind kind = ConnectionKind::adjacent;
  std::vector<std::string> inputs;
  /// 0 means "derive from inputs" (the smallest input channel count).
  int out_channels = 0;
};

struct NetworkTopology {
  int input_channels = 3;
  std::vector<EncoderStageSpec> encoder_stages;
  std::vector<std::vector<RefineBlockSpec>> refine_levels;

  /// Four encoder stages at scales 1, 1/2, 1/4, 1/8 with 8/16/32/64 channels;
  /// level 1 = skip(s1,s3), skip(s2,s4), adjacent(s2,s3,s4); level 2 fuses
  /// the three level-1 outputs.
  static NetworkTopology micro_default(int input_channels = 3);

  /// Checks every structural rule and fills in derived out_channels.
  /// Throws TopologyError.
  void validate();

  /// `8/1,16/2,32/2,64/2`
  [[nodiscard]] std::string stages_string() const;
  /// `r1a=skip(s1,s3) r1b=... | r2a=adjacent(r1a,r1b,r1c)`
  [[nodiscard]] std::string refine_string() const;
  static NetworkTopology parse(int input_channels, const std::string& stages, const std::string& refine);
};

/// 3x3 convolution + ReLU whose output is scaled by sigmoid(alpha).
struct WeightConvLayer {
  Parameter kernel;  // (out, in, 3, 3)
  Parameter alpha;   // 1 element
};

/// relu(conv3x3(x, pad 1)) * sigmoid(alpha).
Var weight_conv_forward(WeightConvLayer& layer, Var x);

struct RefineBlock {
  RefineBlockSpec spec;
  /// One entry per input; only inputs whose channel count differs from
  /// out_channels get a 1x1 projection (empty Parameter otherwise).
  std::vector<Parameter> projections;
  std::vector<bool> has_projection;
  WeightConvLayer conv;
};

/// Upsamples each input to the first (highest-resolution) input's size,
/// sums them and applies the block's weight convolution.
Var refine_block_forward(RefineBlock& block, std::span<const Var> inputs);

struct EncoderLayer {
  Parameter kernel;  // (out, in, 3, 3)
  Parameter bias;    // (1, out, 1, 1)
  int stride = 1;
};

/// Encoder stub + stacked refine levels + 1x1 sigmoid head. Copyable value.
class MicroDrnet {
 public:
  /// Validates the topology (TopologyError) and initializes every kernel from
  /// U(-a, a), a = sqrt(6 / fan_in); biases and alphas start at 0.
  MicroDrnet(NetworkTopology topology, std::uint64_t seed);

  /// (N, C, H, W) image batch -> (N, 1, H, W) edge probabilities.
  Var forward(Graph& g, Var image);

  /// Fixed order: encoder stages, refine blocks (level order), head.
  [[nodiscard]] std::vector<Parameter*> parameters();
  [[nodiscard]] std::vector<const Parameter*> parameters() const;
  [[nodiscard]] std::size_t parameter_count() const;

  [[nodiscard]] const NetworkTopology& topology() const { return topology_; }
  [[nodiscard]] std::vector<EncoderLayer>& encoder() { return encoder_; }
  [[nodiscard]] std::vector<RefineBlock>& blocks() { return blocks_; }
  [[nodiscard]] Parameter& head_kernel() { return head_kernel_; }
  [[nodiscard]] Parameter& head_bias() { return head_bias_; }

 private:
  NetworkTopology topology_;
  std::vector<EncoderLayer> encoder_;
  std::vector<RefineBlock> blocks_;  // flattened in level order
  Parameter head_kernel_;
  Parameter head_bias_;
  std::size_t head_block_ = 0;
};

/// All parameter values in parameters() order as one (1, 1, 1, P) tensor.
Tensor pack_parameters(const MicroDrnet& net);
/// Inverse of pack_parameters. Throws ValidationError when the element count
/// does not match the network.
void unpack_parameters(MicroDrnet& net, const Tensor& packed);

/// Scales for pyramid inference; the default is {0.5, 1, 2}.
struct ScaleSet {
  std::vector<double> scales{0.5, 1.0, 2.0};
  void validate() const;
};

/// Single forward pass on a one-image batch.
ProbabilityMap predict(MicroDrnet& net, const Tensor& image);

/// Mean of per-scale predictions, each resized back to the input size.
/// Throws ContractError when a scaled side would fall below 8 px.
ProbabilityMap predict_multiscale(MicroDrnet& net, const Tensor& image, const ScaleSet& scales);

}  // namespace crispedge
