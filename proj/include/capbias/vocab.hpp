#pragma once

#include <set>
#include <string>
#include <vector>

#include "capbias/common.hpp"

namespace capbias {

// Token inventory plus the word sets driving every gender-aware computation:
// the woman/man sets feed the confusion and confidence terms, the neutral set
// lists gender-neutral person words ("person", "human").
class Vocabulary {
public:
    Vocabulary() = default;
    Vocabulary(std::vector<std::string> tokens, int bos, int eos, int pad, int unk,
               std::set<int> woman_set, std::set<int> man_set, std::set<int> neutral_set);

    // The fixed 40-token caption vocabulary used by the synthetic corpus.
    // With multiword_gender_sets the gendered sets cover the synonym tokens
    // (girl/lady/female, boy/guy/male) instead of the {woman},{man} singletons.
    static Vocabulary caption_vocab(bool multiword_gender_sets = false);

    int size() const { return static_cast<int>(tokens_.size()); }
    int bos() const { return bos_; }
    int eos() const { return eos_; }
    int pad() const { return pad_; }
    int unk() const { return unk_; }

    const std::vector<std::string>& tokens() const { return tokens_; }
    const std::set<int>& woman_set() const { return woman_set_; }
    const std::set<int>& man_set() const { return man_set_; }
    const std::set<int>& neutral_set() const { return neutral_set_; }

    const std::string& token(int id) const;
    // id of a known token; throws InvalidInput for unknown strings
    int id(const std::string& tok) const;
    bool contains(const std::string& tok) const;

    bool is_woman_word(int id) const { return woman_set_.count(id) > 0; }
    bool is_man_word(int id) const { return man_set_.count(id) > 0; }
    bool is_gendered(int id) const { return is_woman_word(id) || is_man_word(id); }
    bool is_person_word(int id) const { return is_gendered(id) || neutral_set_.count(id) > 0; }

    uint64_t hash() const;

    std::string serialize() const;                       // JSON text
    static Vocabulary deserialize(const std::string&);   // throws IoError on malformed input

private:
    void validate() const;

    std::vector<std::string> tokens_;
    int bos_ = 0, eos_ = 1, pad_ = 2, unk_ = 3;
    std::set<int> woman_set_, man_set_, neutral_set_;
};

}  // namespace capbias
