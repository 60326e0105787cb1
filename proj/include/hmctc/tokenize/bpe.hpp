#pragma once

// Byte-pair-encoding wordpiece vocabulary with an end-of-word marker.
//
// Every corpus character c contributes two base pieces, "c" (word-internal)
// and "c</w>" (word-final), so any word over known characters is encodable.
// Id 0 is the CTC blank.

#include "hmctc/ctc/ctc.hpp"

#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>

namespace hmctc::tokenize {

inline constexpr std::string_view kEndOfWord = "</w>";
inline constexpr std::string_view kBlankPiece = "<blank>";

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class EncodingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Splits UTF-8 text into code-point substrings.
inline std::vector<std::string> utf8_chars(std::string_view s) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < s.size();) {
    const auto lead = static_cast<unsigned char>(s[i]);
    std::size_t n = lead < 0x80 ? 1 : (lead >> 5) == 0x6 ? 2 : (lead >> 4) == 0xE ? 3 : (lead >> 3) == 0x1E ? 4 : 1;
    n = std::min(n, s.size() - i);
    out.emplace_back(s.substr(i, n));
    i += n;
  }
  return out;
}

using WordCounts = std::map<std::string, long long>;
using Merge = std::pair<std::string, std::string>;

class WordpieceVocab {
 public:
  WordpieceVocab() = default;

  std::size_t size() const { return pieces_.size(); }
  std::size_t target_size() const { return target_size_; }
  const std::vector<Merge>& merges() const { return merges_; }
  const std::vector<std::string>& pieces() const { return pieces_; }
  const std::string& piece(int id) const { return pieces_.at(static_cast<std::size_t>(id)); }

  std::optional<int> id(const std::string& piece) const {
    auto it = ids_.find(piece);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  // Applies the learned merges in order of rank.
  ctc::LabelSequence encode(std::string_view word) const {
    if (word.empty()) throw EncodingError("cannot encode an empty word");
    std::vector<std::string> sym = utf8_chars(word);
    for (const auto& c : sym) {
      if (!ids_.count(c)) throw EncodingError("unknown character '" + c + "' in word '" + std::string(word) + "'");
    }
    sym.back() += kEndOfWord;
    while (sym.size() > 1) {
      std::size_t best_rank = merges_.size();
      for (std::size_t k = 0; k + 1 < sym.size(); ++k) {
        auto it = rank_.find({sym[k], sym[k + 1]});
        if (it != rank_.end() && it->second < best_rank) best_rank = it->second;
      }
      if (best_rank == merges_.size()) break;
      const Merge& m = merges_[best_rank];
      std::vector<std::string> next;
      next.reserve(sym.size());
      for (std::size_t k = 0; k < sym.size(); ++k) {
        if (k + 1 < sym.size() && sym[k] == m.first && sym[k + 1] == m.second) {
          next.push_back(sym[k] + sym[k + 1]);
          ++k;
        } else {
          next.push_back(sym[k]);
        }
      }
      sym = std::move(next);
    }
    ctc::LabelSequence out;
    out.reserve(sym.size());
    for (const auto& s : sym) out.push_back(ids_.at(s));
    return out;
  }

  ctc::LabelSequence encode_words(const std::vector<std::string>& words) const {
    ctc::LabelSequence out;
    for (const auto& w : words) {
      auto ids = encode(w);
      out.insert(out.end(), ids.begin(), ids.end());
    }
    return out;
  }

  // Concatenates pieces and splits at end-of-word markers. A trailing
  // fragment without a marker still counts as a word.
  std::vector<std::string> decode(std::span<const int> ids) const {
    std::vector<std::string> words;
    std::string cur;
    for (int id : ids) {
      if (id == ctc::kBlank) continue;
      std::string_view p = piece(id);
      if (p.size() >= kEndOfWord.size() && p.substr(p.size() - kEndOfWord.size()) == kEndOfWord) {
        cur += p.substr(0, p.size() - kEndOfWord.size());
        words.push_back(std::move(cur));
        cur.clear();
      } else {
        cur += p;
      }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
  }

  friend WordpieceVocab learn_bpe(const WordCounts& corpus, std::size_t target_size);
  friend WordpieceVocab read_vocab(std::istream& is);

 private:
  void add_piece(const std::string& p) {
    if (ids_.count(p)) return;
    ids_.emplace(p, static_cast<int>(pieces_.size()));
    pieces_.push_back(p);
  }
  void add_merge(const Merge& m) {
    rank_.emplace(m, merges_.size());
    merges_.push_back(m);
  }

  std::size_t target_size_ = 0;
  std::vector<Merge> merges_;
  std::map<Merge, std::size_t> rank_;
  std::vector<std::string> pieces_;
  std::map<std::string, int> ids_;
};

inline std::set<std::string> corpus_characters(const WordCounts& corpus) {
  std::set<std::string> chars;
  for (const auto& [w, n] : corpus) {
    for (auto& c : utf8_chars(w)) chars.insert(std::move(c));
  }
  return chars;
}

// Classic BPE: repeatedly merge the most frequent adjacent pair (ties to the
// lexicographically smallest) until the vocabulary reaches target_size or no
// pair occurs at least twice.
inline WordpieceVocab learn_bpe(const WordCounts& corpus, std::size_t target_size) {
  const auto chars = corpus_characters(corpus);
  const std::size_t base = 1 + 2 * chars.size();
  if (target_size < base) {
    throw ConfigError("vocabulary size " + std::to_string(target_size) + " is below the " + std::to_string(base) +
                      " base pieces required for " + std::to_string(chars.size()) +
                      " characters (each with a word-final form) plus blank");
  }
  WordpieceVocab v;
  v.target_size_ = target_size;
  v.add_piece(std::string(kBlankPiece));
  for (const auto& c : chars) {
    v.add_piece(c);
    v.add_piece(c + std::string(kEndOfWord));
  }

  std::vector<std::pair<std::vector<std::string>, long long>> words;
  for (const auto& [w, n] : corpus) {
    if (w.empty() || n <= 0) continue;
    auto sym = utf8_chars(w);
    sym.back() += kEndOfWord;
    words.emplace_back(std::move(sym), n);
  }

  while (v.size() < target_size) {
    std::map<Merge, long long> counts;
    for (const auto& [sym, n] : words) {
      for (std::size_t k = 0; k + 1 < sym.size(); ++k) counts[{sym[k], sym[k + 1]}] += n;
    }
    const Merge* best = nullptr;
    long long best_count = 1;
    for (const auto& [pair, n] : counts) {
      if (n > best_count) {
        best = &pair;
        best_count = n;
      }
    }
    if (!best) break;
    const Merge m = *best;
    const std::string joined = m.first + m.second;
    for (auto& [sym, n] : words) {
      std::vector<std::string> next;
      next.reserve(sym.size());
      for (std::size_t k = 0; k < sym.size(); ++k) {
        if (k + 1 < sym.size() && sym[k] == m.first && sym[k + 1] == m.second) {
          next.push_back(joined);
          ++k;
        } else {
          next.push_back(sym[k]);
        }
      }
      sym = std::move(next);
    }
    v.add_merge(m);
    v.add_piece(joined);
  }
  return v;
}

// Vocabulary text format:
//
//   #hmctc-bpe 1
//   target <target_size>
//   merges <count>
//   <left> <right>            (one merge per line, in learned order)
//   pieces <count>
//   <piece>\t<id>             (one piece per line, ids dense from 0)
inline void write_vocab(std::ostream& os, const WordpieceVocab& v) {
  os << "#hmctc-bpe 1\n";
  os << "target " << v.target_size() << "\n";
  os << "merges " << v.merges().size() << "\n";
  for (const auto& [a, b] : v.merges()) os << a << ' ' << b << '\n';
  os << "pieces " << v.size() << "\n";
  for (std::size_t i = 0; i < v.size(); ++i) os << v.pieces()[i] << '\t' << i << '\n';
}

inline WordpieceVocab read_vocab(std::istream& is) {
  auto fail = [](const std::string& why) { return std::runtime_error("malformed vocabulary file: " + why); };
  std::string line;
  if (!std::getline(is, line) || line != "#hmctc-bpe 1") throw fail("missing '#hmctc-bpe 1' header");
  WordpieceVocab v;
  std::string key;
  std::size_t n = 0;
  if (!std::getline(is, line)) throw fail("missing target line");
  std::istringstream(line) >> key >> v.target_size_;
  if (key != "target") throw fail("expected 'target'");
  if (!std::getline(is, line)) throw fail("missing merges line");
  std::istringstream(line) >> key >> n;
  if (key != "merges") throw fail("expected 'merges'");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(is, line)) throw fail("truncated merge list");
    const auto sp = line.find(' ');
    if (sp == std::string::npos) throw fail("merge line without separator: " + line);
    v.add_merge({line.substr(0, sp), line.substr(sp + 1)});
  }
  if (!std::getline(is, line)) throw fail("missing pieces line");
  std::istringstream(line) >> key >> n;
  if (key != "pieces") throw fail("expected 'pieces'");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(is, line)) throw fail("truncated piece list");
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw fail("piece line without tab: " + line);
    if (std::stoul(line.substr(tab + 1)) != i) throw fail("piece ids must be dense and ordered");
    v.add_piece(line.substr(0, tab));
  }
  if (v.size() != n) throw fail("duplicate pieces");
  return v;
}

inline void save_vocab(const std::string& path, const WordpieceVocab& v) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_vocab(os, v);
}

inline WordpieceVocab load_vocab(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  return read_vocab(is);
}

}  // namespace hmctc::tokenize
