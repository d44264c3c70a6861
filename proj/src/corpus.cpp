#include "spandiff/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace spandiff {

using nlohmann::json;

std::string_view to_string(Polarity p) {
  switch (p) {
    case Polarity::kPositive:
      return "positive";
    case Polarity::kNegative:
      return "negative";
    case Polarity::kNeutral:
      return "neutral";
  }
  return "neutral";
}

Polarity parse_polarity(std::string_view s) {
  if (s == "positive") return Polarity::kPositive;
  if (s == "negative") return Polarity::kNegative;
  if (s == "neutral") return Polarity::kNeutral;
  throw CorpusError("unknown polarity '" + std::string(s) + "'");
}

std::string AnnotatedExample::describe() const {
  std::ostringstream os;
  if (source_line > 0) {
    os << "example at line " << source_line;
  } else {
    os << "example [";
    for (std::size_t i = 0; i < tokens.size() && i < 6; ++i) os << (i ? " " : "") << tokens[i];
    if (tokens.size() > 6) os << " ...";
    os << "]";
  }
  return os.str();
}

Vocabulary::Vocabulary(std::vector<std::string> reserved) {
  for (auto& s : reserved) add(s);
}

int Vocabulary::add(const std::string& s) {
  if (auto it = stoi_.find(s); it != stoi_.end()) return it->second;
  if (frozen_) return unknown_id();
  const int id = static_cast<int>(itos_.size());
  itos_.push_back(s);
  stoi_.emplace(s, id);
  return id;
}

int Vocabulary::lookup(const std::string& s) const {
  auto it = stoi_.find(s);
  return it == stoi_.end() ? unknown_id() : it->second;
}

json Vocabularies::to_json() const {
  json j;
  j["pos_vocab"] = pos.strings();
  j["dep_label_vocab"] = dep.strings();
  return j;
}

void Vocabularies::save(const std::filesystem::path& path) const {
  const json j = to_json();
  std::ofstream out(path);
  if (!out) throw CorpusError("cannot write vocabulary file " + path.string());
  out << j.dump(2) << '\n';
}

namespace {

Vocabulary vocabulary_from(const json& arr, std::vector<std::string> reserved, const std::string& what) {
  auto strings = arr.get<std::vector<std::string>>();
  if (strings.size() < reserved.size() || !std::equal(reserved.begin(), reserved.end(), strings.begin())) {
    throw CorpusError(what + " does not start with the reserved entries");
  }
  Vocabulary v(std::move(reserved));
  for (const auto& s : strings) v.add(s);
  if (v.size() != static_cast<int>(strings.size())) throw CorpusError(what + " contains duplicates");
  v.freeze();
  return v;
}

}  // namespace

Vocabularies Vocabularies::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open vocabulary file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw CorpusError("malformed vocabulary file " + path.string() + ": " + e.what());
  }
  try {
    return from_json(j);
  } catch (const json::exception& e) {
    throw CorpusError("malformed vocabulary file " + path.string() + ": " + e.what());
  }
}

Vocabularies Vocabularies::from_json(const json& j) {
  Vocabularies v;
  v.pos = vocabulary_from(j.at("pos_vocab"), {std::string(Vocabulary::kUnknown)}, "pos_vocab");
  v.dep = vocabulary_from(j.at("dep_label_vocab"),
                          {std::string(Vocabulary::kUnknown), std::string(kSelfLoop)}, "dep_label_vocab");
  return v;
}

void validate(const AnnotatedExample& ex, const Vocabularies* vocabs) {
  const int n = ex.size();
  if (n == 0) throw CorpusError(ex.describe() + ": empty sentence");
  if (static_cast<int>(ex.pos_ids.size()) != n || static_cast<int>(ex.pos_tags.size()) != n) {
    throw CorpusError(ex.describe() + ": pos length " + std::to_string(ex.pos_tags.size()) +
                      " does not match token count " + std::to_string(n));
  }
  for (const auto& e : ex.edges) {
    if (e.head < 0 || e.head >= n || e.dependent < 0 || e.dependent >= n) {
      throw CorpusError(ex.describe() + ": dependency edge (" + std::to_string(e.head + 1) + "," +
                        std::to_string(e.dependent + 1) + ") out of bounds");
    }
    if (e.head == e.dependent) {
      throw CorpusError(ex.describe() + ": dependency edge is a self-loop at " + std::to_string(e.head + 1));
    }
    if (vocabs && (e.label_id < 0 || e.label_id >= vocabs->dep.size())) {
      throw CorpusError(ex.describe() + ": dependency label id out of range");
    }
  }
  for (const auto& a : ex.gold) {
    if (a.start < 0 || a.start > a.end || a.end >= n) {
      throw CorpusError(ex.describe() + ": aspect span (" + std::to_string(a.start + 1) + "," +
                        std::to_string(a.end + 1) + ") out of bounds for sentence length " +
                        std::to_string(n));
    }
  }
}

AnnotatedExample parse_example(std::string_view line, std::size_t line_no, Vocabularies& vocabs) {
  const std::string where = "line " + std::to_string(line_no);
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw CorpusError("malformed JSON at " + where + ": " + e.what());
  }

  AnnotatedExample ex;
  ex.source_line = line_no;
  try {
    ex.tokens = j.at("tokens").get<std::vector<std::string>>();
    ex.pos_tags = j.at("pos").get<std::vector<std::string>>();
    for (const auto& tag : ex.pos_tags) ex.pos_ids.push_back(vocabs.pos.add(tag));
    if (j.contains("deps")) {
      for (const auto& d : j.at("deps")) {
        DependencyEdge e;
        e.head = d.at(0).get<int>() - 1;
        e.dependent = d.at(1).get<int>() - 1;
        e.label = d.at(2).get<std::string>();
        e.label_id = vocabs.dep.add(e.label);
        ex.edges.push_back(std::move(e));
      }
    }
    if (j.contains("aspects")) {
      for (const auto& a : j.at("aspects")) {
        AspectAnnotation ann;
        ann.start = a.at(0).get<int>() - 1;
        ann.end = a.at(1).get<int>() - 1;
        try {
          ann.polarity = parse_polarity(a.at(2).get<std::string>());
        } catch (const CorpusError& e) {
          throw CorpusError(ex.describe() + ": " + e.what());
        }
        ex.gold.push_back(ann);
      }
    }
  } catch (const json::exception& e) {
    throw CorpusError("schema error at " + where + ": " + e.what());
  }
  validate(ex);
  return ex;
}

namespace {

Dataset load_lines(std::istream& in, std::optional<Vocabularies> vocabs) {
  Dataset ds;
  if (vocabs) ds.vocabs = std::move(*vocabs);
  const bool training_mode = !ds.vocabs.frozen();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    ds.examples.push_back(parse_example(line, line_no, ds.vocabs));
  }
  if (training_mode) ds.vocabs.freeze();
  ds.stats = compute_stats(ds.examples);
  return ds;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& path, std::optional<Vocabularies> vocabs) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open dataset " + path.string());
  return load_lines(in, std::move(vocabs));
}

Dataset load_dataset_from_string(std::string_view text, std::optional<Vocabularies> vocabs) {
  std::istringstream in{std::string(text)};
  return load_lines(in, std::move(vocabs));
}

void apply_vocabularies(AnnotatedExample& ex, const Vocabularies& vocabs) {
  ex.pos_ids.clear();
  for (const auto& tag : ex.pos_tags) ex.pos_ids.push_back(vocabs.pos.lookup(tag));
  for (auto& e : ex.edges) e.label_id = vocabs.dep.lookup(e.label);
}

std::string serialize_example(const AnnotatedExample& ex) {
  nlohmann::ordered_json j;
  j["tokens"] = ex.tokens;
  j["pos"] = ex.pos_tags;
  auto deps = nlohmann::ordered_json::array();
  for (const auto& e : ex.edges) deps.push_back({e.head + 1, e.dependent + 1, e.label});
  j["deps"] = std::move(deps);
  auto aspects = nlohmann::ordered_json::array();
  for (const auto& a : ex.gold) aspects.push_back({a.start + 1, a.end + 1, std::string(to_string(a.polarity))});
  j["aspects"] = std::move(aspects);
  return j.dump();
}

void save_dataset(const std::filesystem::path& path, const std::vector<AnnotatedExample>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write dataset " + path.string());
  for (const auto& ex : examples) out << serialize_example(ex) << '\n';
}

DatasetStats compute_stats(const std::vector<AnnotatedExample>& examples) {
  DatasetStats s;
  s.sentences = examples.size();
  for (const auto& ex : examples) {
    s.targets += ex.gold.size();
    s.max_aspects = std::max(s.max_aspects, ex.gold.size());
  }
  return s;
}

Eigen::MatrixXi build_adjacency(const AnnotatedExample& ex, int self_loop_id) {
  const int n = ex.size();
  Eigen::MatrixXi m = Eigen::MatrixXi::Zero(n, n);
  for (const auto& e : ex.edges) {
    // First listed edge for a word pair wins; that is the head->dependent
    // label for a well-formed tree.
    if (m(e.head, e.dependent) != 0) continue;
    m(e.head, e.dependent) = e.label_id + 1;
    m(e.dependent, e.head) = e.label_id + 1;
  }
  for (int i = 0; i < n; ++i) m(i, i) = self_loop_id + 1;
  return m;
}

namespace {

std::string normalize_piece(std::string_view piece) {
  for (std::string_view prefix : {"##", "\xC4\xA0", "\xE2\x96\x81"}) {
    if (piece.substr(0, prefix.size()) == prefix) {
      piece.remove_prefix(prefix.size());
      break;
    }
  }
  std::string out(piece);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

std::vector<SubwordRange> align_subwords(const std::vector<std::string>& tokens,
                                         const std::vector<std::string>& pieces) {
  std::vector<SubwordRange> out;
  out.reserve(tokens.size());
  std::size_t p = 0;
  for (std::size_t w = 0; w < tokens.size(); ++w) {
    const std::string word = lower(tokens[w]);
    if (word.empty() || p >= pieces.size()) {
      throw CorpusError("word " + std::to_string(w + 1) + " ('" + tokens[w] + "') produced no subwords");
    }
    const int first = static_cast<int>(p);
    std::string built;
    while (p < pieces.size() && built.size() < word.size()) {
      built += normalize_piece(pieces[p]);
      ++p;
      if (word.compare(0, built.size(), built) != 0) break;
    }
    if (built != word) {
      throw CorpusError("subword pieces do not reconstruct word " + std::to_string(w + 1) + " ('" + tokens[w] +
                        "')");
    }
    out.push_back({first, static_cast<int>(p) - 1});
  }
  if (p != pieces.size()) throw CorpusError("trailing subword pieces not covered by any word");
  return out;
}

std::vector<SubwordRange> align_subwords(int num_words, const std::vector<int>& word_ids) {
  std::vector<SubwordRange> out(static_cast<std::size_t>(num_words), SubwordRange{-1, -1});
  int prev = -1;
  for (std::size_t i = 0; i < word_ids.size(); ++i) {
    const int w = word_ids[i];
    if (w < 0) continue;
    if (w >= num_words) throw CorpusError("subword maps to word " + std::to_string(w + 1) + " beyond sentence");
    auto& r = out[static_cast<std::size_t>(w)];
    if (r.first < 0) {
      if (w < prev) throw CorpusError("subword word ids are not monotone");
      r.first = static_cast<int>(i);
    } else if (r.last != static_cast<int>(i) - 1) {
      throw CorpusError("subwords of word " + std::to_string(w + 1) + " are not contiguous");
    }
    r.last = static_cast<int>(i);
    prev = w;
  }
  for (int w = 0; w < num_words; ++w) {
    if (out[static_cast<std::size_t>(w)].first < 0) {
      throw CorpusError("word " + std::to_string(w + 1) + " produced no subwords");
    }
  }
  return out;
}

}  // namespace spandiff
