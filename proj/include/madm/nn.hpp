#pragma once

// libtorch building blocks behind the models facade. Only the model, training
// and test code include this header.

#include <torch/torch.h>

#include <vector>

#include "madm/models.hpp"

namespace madm::nn {

/// Sinusoidal embedding of integer timesteps: [sin(t f_k), cos(t f_k)],
/// f_k = 10000^(-k / (dim/2)). Returns [t.size(0), dim].
torch::Tensor timestep_embedding(const torch::Tensor& t, int dim);

/// Largest group count <= preferred that divides `channels`.
int group_count(int channels, int preferred);

/// GroupNorm -> SiLU -> conv -> (+ time projection) -> GroupNorm -> SiLU -> conv,
/// plus a 1x1 projection of the input when the channel count changes.
class ResBlockImpl : public torch::nn::Module {
 public:
  ResBlockImpl(int dims, int in_ch, int out_ch, int time_dim, int groups);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& temb);

 private:
  int dims_;
  torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::AnyModule conv1_, conv2_, skip_;
  torch::nn::Linear time_proj_{nullptr};
  bool has_skip_ = false;
  bool has_time_ = false;
};
TORCH_MODULE(ResBlock);

/// Encoder-decoder with skip connections, for 2D (dims = 2) or 3D (dims = 3)
/// feature maps. When time_dim > 0 a timestep embedding is added inside every
/// residual block.
class UNetImpl : public torch::nn::Module {
 public:
  struct Options {
    int dims = 2;
    int in_channels = 2;
    int out_channels = 1;
    int base_channels = 16;
    int depth = 2;
    int groups = 8;
    int embedding_dim = 0;  // 0: no timestep conditioning
  };

  explicit UNetImpl(const Options& options);

  /// x: [B, C, spatial...] with every spatial extent divisible by 2^depth.
  /// t: [B] integer timesteps (ignored when unconditioned).
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& t);

  /// Same network with a caller-supplied raw embedding [B, embedding_dim] in
  /// place of the sinusoidal one.
  torch::Tensor forward_with_embedding(const torch::Tensor& x, const torch::Tensor& embedding);

  /// Pads every spatial extent symmetrically with zeros up to a multiple of
  /// 2^depth, runs the network and crops back.
  torch::Tensor forward_padded(const torch::Tensor& x, const torch::Tensor& t);

  const Options& options() const noexcept { return options_; }

 private:
  torch::Tensor run(const torch::Tensor& x, const torch::Tensor& temb);

  Options options_;
  torch::nn::Sequential time_mlp_{nullptr};
  torch::nn::AnyModule in_conv_;
  torch::nn::ModuleList down_blocks_, downsamplers_, up_convs_, up_blocks_;
  ResBlock mid_{nullptr};
  torch::nn::GroupNorm out_norm_{nullptr};
  torch::nn::AnyModule out_conv_;
};
TORCH_MODULE(UNet);

UNet make_denoiser_net(const Denoiser25DConfig& config);
UNet make_prior_net(const Prior3DConfig& config);

/// Prior network output: the input plus the learned correction.
torch::Tensor prior_forward(UNet& net, const torch::Tensor& x);

/// Mean squared error, the loss of both networks.
torch::Tensor mean_squared_error(const torch::Tensor& pred, const torch::Tensor& target);

/// Differentiable diffusion loss on a batch of slices:
///   y_t = sqrt(abar_t) y0 + sqrt(1 - abar_t) eps;  mean((f(y_t, cond, t) - eps)^2)
/// y0, eps: [B, 1, H, W]; cond: [B, 2s+1, H, W]; t: [B] (int64).
torch::Tensor diffusion_loss(UNet& net, const torch::Tensor& y0, const torch::Tensor& cond,
                             const torch::Tensor& t, const torch::Tensor& eps,
                             const NoiseSchedule& schedule);

/// Flat copies of parameters in registration order.
std::vector<torch::Tensor> parameter_list(torch::nn::Module& module);

// Raw weight blob: "MADMWTS1", u32 count, then per tensor: u32 name length,
// name, u32 ndim, i64 dims[ndim], float32 data. Little-endian.
std::vector<char> encode_weights(torch::nn::Module& module);
void decode_weights(torch::nn::Module& module, std::span<const char> bytes);

/// Serialises optimizer state to an opaque byte blob and back.
std::vector<char> encode_optimizer(torch::optim::Optimizer& optimizer);
void decode_optimizer(torch::optim::Optimizer& optimizer, std::span<const char> bytes);

/// Torch networks wrapped in the predictor interfaces.
class TorchDenoiser : public EpsPredictor {
 public:
  TorchDenoiser(Denoiser25DConfig config, UNet net);

  std::size_t context_radius() const override { return config_.context_radius; }
  int timesteps() const override { return config_.timesteps; }
  std::size_t parameter_count() const;
  void predict_eps_batch(std::span<const float> input, std::size_t batch, std::size_t rows,
                         std::size_t cols, int t, std::span<float> out) const override;

  const Denoiser25DConfig& config() const noexcept { return config_; }
  UNet& net() const noexcept { return net_; }

 private:
  Denoiser25DConfig config_;
  mutable UNet net_;
};

class TorchPrior : public PriorPredictor {
 public:
  TorchPrior(Prior3DConfig config, UNet net);

  Volume predict(const Volume& x) const override;
  std::size_t parameter_count() const;

  const Prior3DConfig& config() const noexcept { return config_; }
  UNet& net() const noexcept { return net_; }

 private:
  Prior3DConfig config_;
  mutable UNet net_;
};

}  // namespace madm::nn
