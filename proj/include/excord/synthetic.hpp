#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "excord/data_model.hpp"

namespace excord {

// Small generated corpus with pronoun-heavy follow-up questions. Each document
// describes two people; questions alternate between naming a person and
// referring back to them with a pronoun.
struct SyntheticCorpus {
    std::vector<Dialogue> dialogues;
    // Human-style rewrites for a subset of turns (named person in place of the pronoun).
    std::vector<RewriteRecord> rewrites;
    // The correct rewrite of every turn, including those without a record.
    std::vector<RewriteRecord> gold;
};

struct SyntheticOptions {
    std::size_t dialogues = 60;
    std::uint64_t seed = 7;
    // Share of dialogues whose pronoun turns get a rewrite record.
    double rewritten_fraction = 0.5;
};

SyntheticCorpus make_synthetic_corpus(const SyntheticOptions& options = {});

// Serializers in the QuAC-like and CANARD-like input layouts.
std::string to_quac_json(const std::vector<Dialogue>& dialogues);
std::string to_canard_json(const std::vector<RewriteRecord>& records);

}  // namespace excord
