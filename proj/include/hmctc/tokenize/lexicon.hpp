#pragma once

#include "hmctc/ctc/ctc.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace hmctc::tokenize {

class OovError : public std::runtime_error {
 public:
  explicit OovError(const std::string& word)
      : std::runtime_error("word '" + word + "' is not in the lexicon"), word_(word) {}
  const std::string& word() const { return word_; }

 private:
  std::string word_;
};

// Word -> canonical pronunciation. Phone ids are dense with the blank at 0
// and the remaining phones numbered in sorted order.
class Lexicon {
 public:
  Lexicon() = default;

  explicit Lexicon(std::map<std::string, std::vector<std::string>> entries) : entries_(std::move(entries)) {
    std::set<std::string> phones;
    for (const auto& [w, pron] : entries_) {
      if (pron.empty()) throw std::invalid_argument("lexicon entry '" + w + "' has an empty pronunciation");
      phones.insert(pron.begin(), pron.end());
    }
    phones_.push_back(std::string("<blank>"));
    for (const auto& p : phones) {
      phone_ids_.emplace(p, static_cast<int>(phones_.size()));
      phones_.push_back(p);
    }
  }

  std::size_t num_phones() const { return phones_.size(); }  // including blank
  const std::vector<std::string>& phones() const { return phones_; }
  const std::string& phone(int id) const { return phones_.at(static_cast<std::size_t>(id)); }
  int phone_id(const std::string& p) const { return phone_ids_.at(p); }
  const std::map<std::string, std::vector<std::string>>& entries() const { return entries_; }
  bool contains(const std::string& w) const { return entries_.count(w) > 0; }

  // Concatenated pronunciations, no word-boundary symbol.
  ctc::LabelSequence phones_for(const std::vector<std::string>& words) const {
    ctc::LabelSequence out;
    for (const auto& w : words) {
      auto it = entries_.find(w);
      if (it == entries_.end()) throw OovError(w);
      for (const auto& p : it->second) out.push_back(phone_ids_.at(p));
    }
    return out;
  }

 private:
  std::map<std::string, std::vector<std::string>> entries_;
  std::vector<std::string> phones_;
  std::map<std::string, int> phone_ids_;
};

// `word TAB phone phone ...` lines.
inline Lexicon read_lexicon(std::istream& is) {
  std::map<std::string, std::vector<std::string>> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw std::runtime_error("lexicon line " + std::to_string(lineno) + " has no tab");
    std::istringstream ps(line.substr(tab + 1));
    std::vector<std::string> pron;
    for (std::string p; ps >> p;) pron.push_back(p);
    entries[line.substr(0, tab)] = std::move(pron);
  }
  return Lexicon(std::move(entries));
}

inline void write_lexicon(std::ostream& os, const Lexicon& lex) {
  for (const auto& [w, pron] : lex.entries()) {
    os << w << '\t';
    for (std::size_t i = 0; i < pron.size(); ++i) os << (i ? " " : "") << pron[i];
    os << '\n';
  }
}

inline Lexicon load_lexicon(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  return read_lexicon(is);
}

}  // namespace hmctc::tokenize
