#include "capbias/vocab.hpp"

#include <algorithm>
#include <unordered_map>

#include <json.hpp>

namespace capbias {

namespace {

const std::vector<std::string> kCaptionTokens = {
    "<bos>", "<eos>", "<pad>", "<unk>",
    "a",
    "person", "human",
    "woman", "girl", "lady", "female",
    "man", "boy", "guy", "male",
    "riding", "holding", "using", "in", "with", "standing", "posing",
    "snowboard", "motorcycle", "umbrella", "kitchen", "dog", "laptop",
    "the", "near", "snow", "street", "park", "home",
    "young", "old", "sitting", "walking", "table", "chair",
};

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> tokens, int bos, int eos, int pad, int unk,
                       std::set<int> woman_set, std::set<int> man_set, std::set<int> neutral_set)
    : tokens_(std::move(tokens)),
      bos_(bos),
      eos_(eos),
      pad_(pad),
      unk_(unk),
      woman_set_(std::move(woman_set)),
      man_set_(std::move(man_set)),
      neutral_set_(std::move(neutral_set)) {
    validate();
}

Vocabulary Vocabulary::caption_vocab(bool multiword_gender_sets) {
    std::set<int> gw, gm;
    if (multiword_gender_sets) {
        gw = {7, 8, 9, 10};
        gm = {11, 12, 13, 14};
    } else {
        gw = {7};
        gm = {11};
    }
    return Vocabulary(kCaptionTokens, 0, 1, 2, 3, gw, gm, {5, 6});
}

void Vocabulary::validate() const {
    if (tokens_.empty()) throw InvalidInput("Vocabulary: empty token list");
    std::set<std::string> uniq(tokens_.begin(), tokens_.end());
    if (uniq.size() != tokens_.size()) throw InvalidInput("Vocabulary: duplicate tokens");
    std::set<int> specials = {bos_, eos_, pad_, unk_};
    if (specials.size() != 4) throw InvalidInput("Vocabulary: special token ids must be distinct");
    auto in_range = [this](int id) { return id >= 0 && id < size(); };
    for (int id : specials)
        if (!in_range(id)) throw InvalidInput("Vocabulary: special token id out of range");
    for (const auto* s : {&woman_set_, &man_set_, &neutral_set_})
        for (int id : *s)
            if (!in_range(id)) throw InvalidInput("Vocabulary: gender set id out of range");
    for (int id : woman_set_)
        if (man_set_.count(id)) throw InvalidInput("Vocabulary: woman and man sets overlap");
    for (int id : neutral_set_)
        if (woman_set_.count(id) || man_set_.count(id))
            throw InvalidInput("Vocabulary: neutral set overlaps a gendered set");
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size()) throw InvalidInput("Vocabulary::token: id out of range: " + std::to_string(id));
    return tokens_[id];
}

int Vocabulary::id(const std::string& tok) const {
    auto it = std::find(tokens_.begin(), tokens_.end(), tok);
    if (it == tokens_.end()) throw InvalidInput("Vocabulary::id: unknown token '" + tok + "'");
    return static_cast<int>(it - tokens_.begin());
}

bool Vocabulary::contains(const std::string& tok) const {
    return std::find(tokens_.begin(), tokens_.end(), tok) != tokens_.end();
}

uint64_t Vocabulary::hash() const {
    uint64_t h = 1469598103934665603ull;
    const char sep = '\x1f';
    for (const auto& t : tokens_) {
        h = fnv1a64(t, h);
        h = fnv1a64(&sep, 1, h);
    }
    auto mix_int = [&h](int v) {
        uint32_t u = static_cast<uint32_t>(v);
        h = fnv1a64(&u, sizeof(u), h);
    };
    for (int v : {bos_, eos_, pad_, unk_}) mix_int(v);
    for (const auto* s : {&woman_set_, &man_set_, &neutral_set_}) {
        mix_int(static_cast<int>(s->size()));
        for (int id : *s) mix_int(id);
    }
    return h;
}

std::string Vocabulary::serialize() const {
    nlohmann::json j;
    j["tokens"] = tokens_;
    j["bos"] = bos_;
    j["eos"] = eos_;
    j["pad"] = pad_;
    j["unk"] = unk_;
    j["woman_set"] = woman_set_;
    j["man_set"] = man_set_;
    j["neutral_set"] = neutral_set_;
    return j.dump();
}

Vocabulary Vocabulary::deserialize(const std::string& text) {
    try {
        auto j = nlohmann::json::parse(text);
        return Vocabulary(j.at("tokens").get<std::vector<std::string>>(), j.at("bos"), j.at("eos"),
                          j.at("pad"), j.at("unk"), j.at("woman_set").get<std::set<int>>(),
                          j.at("man_set").get<std::set<int>>(), j.at("neutral_set").get<std::set<int>>());
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("Vocabulary::deserialize: ") + e.what());
    }
}

}  // namespace capbias
