#pragma once

// Per-frame alignment tables: the argmax label of each head at every encoded
// frame, next to the reference words spanning that frame.

#include "hmctc/multitask/model.hpp"
#include "hmctc/tokenize/bpe.hpp"
#include "hmctc/tokenize/lexicon.hpp"

#include <ostream>

namespace hmctc::cli {

inline constexpr const char* kBlankCell = "_";
inline constexpr const char* kNoWordCell = "-";

struct AlignmentRow {
  std::string label;  // "subword", "phone" or "words"
  std::vector<std::string> cells;
};

struct Alignment {
  std::string utterance;
  std::vector<AlignmentRow> rows;
};

// Frame-level labels rendered with `name`; blank becomes "_".
template <class Name>
AlignmentRow argmax_row(std::string label, const Tensor& log_probs, Name name) {
  AlignmentRow row{std::move(label), {}};
  for (int id : ctc::best_path(log_probs)) row.cells.push_back(id == ctc::kBlank ? kBlankCell : name(id));
  return row;
}

// Encoded frame t covers input frames [2t, 2t + 2); it shows the word whose
// span contains frame 2t, or "-" between words.
inline AlignmentRow word_row(const data::Utterance& u, std::size_t encoded) {
  AlignmentRow row{"words", std::vector<std::string>(encoded, kNoWordCell)};
  for (std::size_t w = 0; w < u.word_spans.size() && w < u.words.size(); ++w) {
    for (std::size_t t = 0; t < encoded; ++t) {
      const std::size_t f = t * encoder::EncoderConfig::kTimeReduction;
      if (f >= u.word_spans[w].begin && f < u.word_spans[w].end) row.cells[t] = u.words[w];
    }
  }
  return row;
}

// Rows for one utterance. The phone row is present only when the model has
// a phone head; the word row only when the utterance carries word spans.
inline Alignment align_utterance(const multitask::Model& model, const tokenize::WordpieceVocab& vocab,
                                 const tokenize::Lexicon& lexicon, const data::Utterance& u) {
  Alignment a{u.id, {}};
  const Tensor sub = model.subword_log_probs(u.features);
  a.rows.push_back(argmax_row("subword", sub, [&](int id) { return vocab.piece(id); }));
  if (model.has_phone_head()) {
    a.rows.push_back(argmax_row("phone", model.phone_log_probs(u.features),
                                [&](int id) { return lexicon.phone(id); }));
  }
  if (!u.word_spans.empty()) a.rows.push_back(word_row(u, sub.rows()));
  return a;
}

inline std::string align_header() { return "utterance\trow\tcells"; }

// One TSV line per row: utterance id, row label, then one cell per encoded
// frame.
inline void write_alignment(std::ostream& os, const Alignment& a) {
  for (const auto& r : a.rows) {
    os << a.utterance << '\t' << r.label;
    for (const auto& c : r.cells) os << '\t' << c;
    os << '\n';
  }
}

}  // namespace hmctc::cli
