#include "spandiff/encoder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

namespace spandiff {

using autograd::Graph;
using autograd::Matrix;
using autograd::Var;

namespace {

std::string lower(const std::string& s) {
  std::string out = s;
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string sentence_key(const std::vector<std::string>& tokens) {
  std::string key;
  for (const auto& t : tokens) {
    key += t;
    key += '\x1f';
  }
  return key;
}

}  // namespace

Matrix glorot(int rows, int cols, std::mt19937_64& rng, double scale) {
  const double limit = scale * std::sqrt(6.0 / (rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = dist(rng);
  return m;
}

std::vector<EncoderOutput> Encoder::encode_batch(Graph& g, const std::vector<AnnotatedExample>& batch) const {
  std::vector<EncoderOutput> out;
  out.reserve(batch.size());
  for (const auto& ex : batch) out.push_back(encode(g, ex));
  return out;
}

Matrix pooling_matrix(const std::vector<SubwordRange>& ranges, int num_subwords, int offset) {
  Matrix p = Matrix::Zero(static_cast<Eigen::Index>(ranges.size()), num_subwords);
  for (std::size_t w = 0; w < ranges.size(); ++w) {
    const auto& r = ranges[w];
    const double weight = 1.0 / (r.last - r.first + 1);
    for (int k = r.first; k <= r.last; ++k) p(static_cast<Eigen::Index>(w), k + offset) = weight;
  }
  return p;
}

Vocabulary ToyEncoder::build_vocabulary(const std::vector<AnnotatedExample>& examples) {
  Vocabulary v({std::string(Vocabulary::kUnknown), kStart, kEnd});
  for (const auto& ex : examples)
    for (const auto& t : ex.tokens) v.add(lower(t));
  v.freeze();
  return v;
}

ToyEncoder::ToyEncoder(Vocabulary words, int hidden_size, int max_len, autograd::ParameterStore& store,
                       std::mt19937_64& rng, double init_scale)
    : words_(std::move(words)), hidden_size_(hidden_size), max_len_(max_len) {
  words_.freeze();
  const int d = hidden_size;
  embedding_ = &store.create("encoder.word_embedding", glorot(words_.size(), d, rng, init_scale));
  positions_ = &store.create("encoder.position_embedding", glorot(max_len, d, rng, init_scale));
  mix_left_ = &store.create("encoder.mix_left", glorot(d, d, rng, init_scale));
  mix_center_ = &store.create("encoder.mix_center", glorot(d, d, rng, init_scale));
  mix_right_ = &store.create("encoder.mix_right", glorot(d, d, rng, init_scale));
  mix_bias_ = &store.create("encoder.mix_bias", Matrix::Zero(1, d));
}

std::vector<std::string> ToyEncoder::tokenize(const std::vector<std::string>& tokens) const {
  std::vector<std::string> pieces;
  pieces.reserve(tokens.size());
  for (const auto& t : tokens) pieces.push_back(lower(t));
  return pieces;
}

EncoderOutput ToyEncoder::encode(Graph& g, const AnnotatedExample& ex) const {
  const auto pieces = tokenize(ex.tokens);
  const auto ranges = align_subwords(ex.tokens, pieces);
  const int n = static_cast<int>(pieces.size()) + 2;
  if (n > max_len_) {
    throw EncoderError(ex.describe() + ": " + std::to_string(n) + " encoder positions exceed max_len " +
                       std::to_string(max_len_));
  }
  std::vector<int> ids;
  ids.reserve(static_cast<std::size_t>(n));
  ids.push_back(words_.lookup(kStart));
  for (const auto& p : pieces) ids.push_back(words_.lookup(p));
  ids.push_back(words_.lookup(kEnd));
  std::vector<int> positions(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) positions[static_cast<std::size_t>(i)] = i;

  Var e = add(gather_rows(g.param(*embedding_), ids), gather_rows(g.param(*positions_), positions));
  // Shift operators select the previous / next subword (zero-padded).
  Matrix prev = Matrix::Zero(n, n);
  Matrix next = Matrix::Zero(n, n);
  for (int i = 1; i < n; ++i) prev(i, i - 1) = 1.0;
  for (int i = 0; i + 1 < n; ++i) next(i, i + 1) = 1.0;
  Var left = matmul(matmul(g.constant(prev), e), g.param(*mix_left_));
  Var right = matmul(matmul(g.constant(next), e), g.param(*mix_right_));
  Var center = matmul(e, g.param(*mix_center_));
  Var mixed = tanh(add_row(add(add(left, center), right), g.param(*mix_bias_)));
  Var sub = add(e, mixed);
  Var words = matmul(g.constant(pooling_matrix(ranges, n, 1)), sub);
  return {words, hidden_size_};
}

nlohmann::json ToyEncoder::state() const {
  return {{"kind", "toy"}, {"vocabulary", words_.strings()}};
}

PrecomputedEncoder::PrecomputedEncoder(const std::string& feature_path, int hidden_size, int max_len,
                                       autograd::ParameterStore& store, std::mt19937_64& rng, double init_scale)
    : path_(feature_path), hidden_size_(hidden_size), max_len_(max_len) {
  std::ifstream in(feature_path);
  if (!in) throw EncoderError("cannot open feature file " + feature_path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      Record rec;
      const auto tokens = j.at("tokens").get<std::vector<std::string>>();
      rec.word_ids = j.at("word_ids").get<std::vector<int>>();
      const auto rows = j.at("features").get<std::vector<std::vector<double>>>();
      if (rows.size() != rec.word_ids.size()) throw EncoderError("features/word_ids length mismatch");
      const int dim = rows.empty() ? 0 : static_cast<int>(rows.front().size());
      if (feature_size_ == 0) feature_size_ = dim;
      if (dim != feature_size_) throw EncoderError("inconsistent feature width");
      rec.features.resize(static_cast<Eigen::Index>(rows.size()), dim);
      for (std::size_t r = 0; r < rows.size(); ++r)
        for (int c = 0; c < dim; ++c) rec.features(static_cast<Eigen::Index>(r), c) = rows[r].at(static_cast<std::size_t>(c));
      records_.emplace(sentence_key(tokens), std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw EncoderError(feature_path + " line " + std::to_string(line_no) + ": " + e.what());
    } catch (const EncoderError& e) {
      throw EncoderError(feature_path + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (feature_size_ == 0) throw EncoderError("feature file " + feature_path + " holds no records");
  projection_ = &store.create("encoder.projection", glorot(feature_size_, hidden_size, rng, init_scale));
  projection_bias_ = &store.create("encoder.projection_bias", Matrix::Zero(1, hidden_size));
}

EncoderOutput PrecomputedEncoder::encode(Graph& g, const AnnotatedExample& ex) const {
  auto it = records_.find(sentence_key(ex.tokens));
  if (it == records_.end()) throw EncoderError(ex.describe() + ": no precomputed features for this sentence");
  const auto& rec = it->second;
  const int n = static_cast<int>(rec.word_ids.size());
  if (n > max_len_) {
    throw EncoderError(ex.describe() + ": " + std::to_string(n) + " subwords exceed max_len " + std::to_string(max_len_));
  }
  const auto ranges = align_subwords(ex.size(), rec.word_ids);
  Matrix pooled = pooling_matrix(ranges, n, 0) * rec.features;
  Var h = add_row(matmul(g.constant(std::move(pooled)), g.param(*projection_)), g.param(*projection_bias_));
  return {h, hidden_size_};
}

nlohmann::json PrecomputedEncoder::state() const { return {{"kind", "pretrained"}, {"path", path_}}; }

}  // namespace spandiff
