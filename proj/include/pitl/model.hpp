// Copyright 2026 The pitl Authors
// SPDX-License-Identifier: Apache-2.0

// Vision encoder, text encoder and text-over-image fusion encoder, plus the
// projection, matching and masked-token heads. All dimensions come from
// ModelConfig.

#ifndef PITL_MODEL_HPP_
#define PITL_MODEL_HPP_

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "pitl/autodiff.hpp"
#include "pitl/corpus.hpp"
#include "pitl/random.hpp"
#include "pitl/tensor.hpp"

namespace pitl {

struct ModelConfig {
  int vision_layers = 2;
  int text_layers = 2;
  int fusion_layers = 1;
  int hidden_dim = 32;
  int heads = 2;
  int patch_size = 4;
  int image_size = 16;
  int channels = 3;
  int vocab_size = 128;
  int max_text_len = 24;
  int projection_dim = 32;
  int mlp_ratio = 2;

  /// Layer counts and widths of the full-size architecture.
  static ModelConfig reference_scale();

  /// Throws ContractError when a count is < 1, hidden_dim % heads != 0 or
  /// image_size % patch_size != 0.
  void validate() const;
  int patches_per_side() const { return image_size / patch_size; }
  int num_patches() const { return patches_per_side() * patches_per_side(); }
  int patch_dim() const { return patch_size * patch_size * channels; }

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  /// Applies one flat `key = value` setting; returns false for unknown keys.
  bool set(const std::string& key, const std::string& value);

  bool operator==(const ModelConfig&) const = default;
};

/// Pixels of one image: (height * width) x channels, row y * width + x.
template <typename Scalar>
struct ImageTensor {
  Index height = 0;
  Index width = 0;
  Index channels = 0;
  Matrix<Scalar> pixels;

  static ImageTensor from(const corpus::Image& image) {
    ImageTensor t{image.size, image.size, image.channels, Matrix<Scalar>(image.size * image.size, image.channels)};
    for (int r = 0; r < image.size * image.size; ++r)
      for (int c = 0; c < image.channels; ++c)
        t.pixels(r, c) = static_cast<Scalar>(image.pixels[static_cast<std::size_t>(r * image.channels + c)]);
    return t;
  }
};

template <typename Scalar>
struct EncodedImage {
  Var<Scalar> sequence;  // (n_v + 1) x hidden, CLS first
  Var<Scalar> cls;       // 1 x hidden
  Index num_patches = 0;
};

template <typename Scalar>
struct EncodedText {
  Var<Scalar> sequence;            // (n_t + 1) x hidden, CLS first
  Var<Scalar> cls;                 // 1 x hidden
  std::vector<char> key_valid;     // attention mask, one flag per position
};

template <typename Scalar>
struct FusedSequence {
  Var<Scalar> sequence;  // (n_t + 1) x hidden
  Var<Scalar> cls;
};

enum class ProjectionHead { Image, Text };

template <typename Scalar>
class Model {
 public:
  Model(ModelConfig config, std::uint64_t init_seed);
  /// Adopts existing parameters; names and shapes must match the config.
  Model(ModelConfig config, ParameterStore<Scalar> params);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }
  ParameterStore<Scalar>& parameters() { return params_; }
  const ParameterStore<Scalar>& parameters() const { return params_; }

  /// Throws ContractError when the pixels are not image_size x image_size x
  /// channels.
  EncodedImage<Scalar> encode_image(Tape<Scalar>& tape, const ImageTensor<Scalar>& image);
  /// Same, with the pixel matrix already on the tape (e.g. as a variable).
  EncodedImage<Scalar> encode_image(Tape<Scalar>& tape, const Var<Scalar>& pixels);
  /// Encodes already-extracted patch rows with explicit positional rows
  /// (row 0 is the CLS position).
  EncodedImage<Scalar> encode_patches(Tape<Scalar>& tape, const Var<Scalar>& patches, const Var<Scalar>& positional);

  /// `token_ids` starts with [CLS]; `key_valid` (empty = all valid) marks
  /// positions that may be attended to. Throws ContractError on an
  /// out-of-vocabulary id or an over-long sequence.
  EncodedText<Scalar> encode_text(Tape<Scalar>& tape, const std::vector<int>& token_ids,
                                  const std::vector<char>& key_valid = {});

  /// Text positions query themselves (masked self-attention) and every image
  /// position (cross-attention) in every layer.
  FusedSequence<Scalar> fuse(Tape<Scalar>& tape, const EncodedImage<Scalar>& image, const EncodedText<Scalar>& text);

  /// Unnormalized projection rows (x W + b).
  Var<Scalar> project(Tape<Scalar>& tape, const Var<Scalar>& cls_rows, ProjectionHead head);
  /// L2-normalized projection rows; a zero row is floored at eps.
  Var<Scalar> project_cls(Tape<Scalar>& tape, const Var<Scalar>& cls_rows, ProjectionHead head);

  /// Two-way matched/unmatched logits per fused CLS row (column 1 = matched).
  Var<Scalar> itm_logits(Tape<Scalar>& tape, const Var<Scalar>& fused_cls_rows);
  /// Vocabulary logits per fused token row.
  Var<Scalar> mlm_logits(Tape<Scalar>& tape, const Var<Scalar>& token_rows);

  Var<Scalar> log_temperature(Tape<Scalar>& tape);
  Scalar temperature() const;
  /// Keeps tau inside [kMinTemperature, kMaxTemperature].
  void clamp_temperature();

  static constexpr double kInitialTemperature = 0.07;
  static constexpr double kMinTemperature = 1e-3;
  static constexpr double kMaxTemperature = 10.0;

 private:
  struct Linear {
    Parameter<Scalar>* weight = nullptr;
    Parameter<Scalar>* bias = nullptr;
  };
  struct Norm {
    Parameter<Scalar>* gamma = nullptr;
    Parameter<Scalar>* beta = nullptr;
  };
  struct Attention {
    Linear q, k, v, o;
  };
  struct Block {
    Norm ln_self;
    Attention self_attn;
    bool has_cross = false;
    Norm ln_cross;
    Attention cross_attn;
    Norm ln_mlp;
    Linear fc1, fc2;
  };

  void create_parameters(Rng& rng);
  void bind();
  Linear bind_linear(const std::string& prefix);
  Norm bind_norm(const std::string& prefix);
  Attention bind_attention(const std::string& prefix);
  Block bind_block(const std::string& prefix, bool cross);

  Var<Scalar> linear(Tape<Scalar>& tape, const Linear& l, const Var<Scalar>& x);
  Var<Scalar> norm(Tape<Scalar>& tape, const Norm& n, const Var<Scalar>& x);
  Var<Scalar> attention(Tape<Scalar>& tape, const Attention& a, const Var<Scalar>& query, const Var<Scalar>& context,
                        const std::vector<char>& key_valid);
  Var<Scalar> block(Tape<Scalar>& tape, const Block& b, const Var<Scalar>& x, const std::vector<char>& key_valid,
                    const Var<Scalar>* image_context);

  ModelConfig config_;
  ParameterStore<Scalar> params_;

  Linear patch_embed_;
  Parameter<Scalar>* vision_cls_ = nullptr;
  Parameter<Scalar>* vision_pos_ = nullptr;
  std::vector<Block> vision_blocks_;
  Norm vision_final_;

  Parameter<Scalar>* token_embed_ = nullptr;
  Parameter<Scalar>* text_pos_ = nullptr;
  std::vector<Block> text_blocks_;
  Norm text_final_;

  std::vector<Block> fusion_blocks_;
  Norm fusion_final_;

  Linear proj_image_, proj_text_, itm_head_, mlm_head_;
  Parameter<Scalar>* log_tau_ = nullptr;
};

/// Placeholder for importing external pretrained weights; always throws.
template <typename Scalar>
void import_pretrained_weights(Model<Scalar>& model, const std::string& source);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace pitl

#endif  // PITL_MODEL_HPP_
