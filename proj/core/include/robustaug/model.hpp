#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "robustaug/graph.hpp"
#include "robustaug/tensor.hpp"

namespace robustaug {

enum class ArchKind { Linear, Mlp, SmallCnn };

std::string to_string(ArchKind kind);
ArchKind parse_arch_kind(const std::string& name);

// Desk-scale stand-ins for the wide residual networks. All activations are
// SiLU and there are no batch statistics, so logits of one example never
// depend on the rest of the batch.
//
// widths: mlp -> hidden sizes; small_cnn -> {conv1 filters, conv2 filters,
// dense width}. conv1 is 3x3/stride 1/pad 1, conv2 is 4x4/stride 2/pad 1
// (halves even extents exactly).
struct ArchSpec {
  ArchKind kind = ArchKind::SmallCnn;
  std::size_t channels = 3;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t classes = 10;
  std::vector<std::size_t> widths;

  std::size_t input_size() const { return channels * height * width; }
  Shape image_shape() const { return {channels, height, width}; }
  void validate() const;
  // Widths actually used (defaults filled in).
  std::vector<std::size_t> resolved_widths() const;
  // Single-line text form, also used in checkpoint headers.
  std::string describe() const;
  static ArchSpec parse(const std::string& text);

  bool operator==(const ArchSpec&) const = default;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Flat, ordered parameter list. The order is canonical: serialization, the
// optimizer state and the EMA all rely on it.
struct ModelParams {
  std::vector<NamedTensor> entries;

  std::size_t count() const;
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool same_layout(const ModelParams& other) const;
  void zero_grad();
  void set_requires_grad(bool on);
};

ModelParams init_model(const ArchSpec& spec, std::uint64_t seed);

// Anything an attack can differentiate through.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual std::size_t num_classes() const = 0;
  virtual Shape image_shape() const = 0;
  // Logits [B,K] for images [B,C,H,W]; parameters enter as constants.
  virtual Var logits(Graph& g, Var images) const = 0;
};

// Builds the forward graph. With trainable = true the parameters enter as
// leaves and backward() accumulates into their grad buffers.
Var forward(Graph& g, const ArchSpec& spec, ModelParams& params, Var images, bool trainable);
Var forward(Graph& g, const ArchSpec& spec, const ModelParams& params, Var images);

// Plain evaluation, no gradients.
Tensor predict(const ArchSpec& spec, const ModelParams& params, const Tensor& images);

class Model final : public Classifier {
 public:
  Model(ArchSpec spec, ModelParams params);

  std::size_t num_classes() const override { return spec_.classes; }
  Shape image_shape() const override { return spec_.image_shape(); }
  Var logits(Graph& g, Var images) const override;

  const ArchSpec& spec() const { return spec_; }
  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }

 private:
  ArchSpec spec_;
  ModelParams params_;
};

// Averages member softmax outputs; the returned "logits" are the log of the
// mean probabilities so argmax matches ensemble_predict.
class Ensemble final : public Classifier {
 public:
  explicit Ensemble(std::vector<const Classifier*> members);

  std::size_t num_classes() const override;
  Shape image_shape() const override;
  Var logits(Graph& g, Var images) const override;

 private:
  std::vector<const Classifier*> members_;
};

// Checkpoint: one text header line "robustaug-checkpoint v1 <arch>\n", then
// per parameter in canonical order: u32 name length, name bytes, u32 rank,
// u64 extents, raw little-endian float64 payload.
void save_checkpoint(const std::filesystem::path& path, const ArchSpec& spec, const ModelParams& params);
std::pair<ArchSpec, ModelParams> load_checkpoint(const std::filesystem::path& path);

}  // namespace robustaug
