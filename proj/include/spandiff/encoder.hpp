#pragma once

// Contextual encoders producing one row per word.
//
// Both encoders work on a subword sequence framed by start/end markers and
// mean-pool every word's subword range back to word level, so the output has
// exactly |S| rows and never contains the markers.

#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "spandiff/autograd.hpp"
#include "spandiff/corpus.hpp"

namespace spandiff {

class EncoderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Word-level contextual representations, |S| x d.
struct EncoderOutput {
  autograd::Var H;
  int hidden_size = 0;
};

class Encoder {
 public:
  virtual ~Encoder() = default;

  virtual EncoderOutput encode(autograd::Graph& g, const AnnotatedExample& example) const = 0;
  /// Serializable state other than parameters (vocabularies, feature paths).
  virtual nlohmann::json state() const = 0;
  virtual std::string kind() const = 0;

  std::vector<EncoderOutput> encode_batch(autograd::Graph& g, const std::vector<AnnotatedExample>& batch) const;
};

/// Mean-pooling matrix (|S| x num_subwords) over `ranges`, with `offset`
/// leading columns skipped (the start marker).
autograd::Matrix pooling_matrix(const std::vector<SubwordRange>& ranges, int num_subwords, int offset);

/// Trainable word embedding + learned positions + a one-layer windowed
/// mixer (left, centre, right neighbours) with a residual connection.
class ToyEncoder final : public Encoder {
 public:
  static constexpr const char* kStart = "<s>";
  static constexpr const char* kEnd = "</s>";

  /// Builds the word vocabulary from lower-cased training tokens.
  static Vocabulary build_vocabulary(const std::vector<AnnotatedExample>& examples);

  ToyEncoder(Vocabulary words, int hidden_size, int max_len, autograd::ParameterStore& store, std::mt19937_64& rng,
             double init_scale = 1.0);

  EncoderOutput encode(autograd::Graph& g, const AnnotatedExample& example) const override;
  nlohmann::json state() const override;
  std::string kind() const override { return "toy"; }

  /// One piece per word; the toy tokenizer never splits.
  std::vector<std::string> tokenize(const std::vector<std::string>& tokens) const;
  const Vocabulary& vocabulary() const { return words_; }

 private:
  Vocabulary words_;
  int hidden_size_;
  int max_len_;
  autograd::Parameter* embedding_;
  autograd::Parameter* positions_;
  autograd::Parameter* mix_left_;
  autograd::Parameter* mix_center_;
  autograd::Parameter* mix_right_;
  autograd::Parameter* mix_bias_;
};

/// Frozen features from a pre-trained transformer, computed offline by
/// tools/extract_features.py, followed by a trainable projection to d.
///
/// Feature file: JSONL, one record per sentence:
///   {"tokens": [...], "word_ids": [...], "features": [[...], ...]}
/// `word_ids` has one entry per subword including markers (-1 for markers).
class PrecomputedEncoder final : public Encoder {
 public:
  PrecomputedEncoder(const std::string& feature_path, int hidden_size, int max_len, autograd::ParameterStore& store,
                     std::mt19937_64& rng, double init_scale = 1.0);

  EncoderOutput encode(autograd::Graph& g, const AnnotatedExample& example) const override;
  nlohmann::json state() const override;
  std::string kind() const override { return "pretrained"; }

  int feature_size() const { return feature_size_; }

 private:
  struct Record {
    std::vector<int> word_ids;
    autograd::Matrix features;
  };

  std::string path_;
  int hidden_size_;
  int max_len_;
  int feature_size_ = 0;
  std::unordered_map<std::string, Record> records_;
  autograd::Parameter* projection_ = nullptr;
  autograd::Parameter* projection_bias_ = nullptr;
};

/// Uniform Glorot initialisation scaled by `scale`.
autograd::Matrix glorot(int rows, int cols, std::mt19937_64& rng, double scale = 1.0);

}  // namespace spandiff
