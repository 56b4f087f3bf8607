#include "capbias/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

using nlohmann::json;

namespace capbias {

std::string to_string(SentenceGenderClass c) {
    switch (c) {
        case SentenceGenderClass::WomanSet: return "woman";
        case SentenceGenderClass::ManSet: return "man";
        case SentenceGenderClass::Neutral: return "neutral";
        default: return "mixed";
    }
}

SentenceGenderClass classify_sentence(const std::vector<int>& tokens, const Vocabulary& vocab) {
    bool w = false, m = false;
    for (int t : tokens) {
        w |= vocab.is_woman_word(t);
        m |= vocab.is_man_word(t);
    }
    if (w && m) return SentenceGenderClass::Mixed;
    if (w) return SentenceGenderClass::WomanSet;
    if (m) return SentenceGenderClass::ManSet;
    return SentenceGenderClass::Neutral;
}

namespace {

bool is_error(SentenceGenderClass pred, GenderLabel label) {
    if (pred == SentenceGenderClass::Mixed) return true;
    if (label == GenderLabel::Woman) return pred == SentenceGenderClass::ManSet;
    if (label == GenderLabel::Man) return pred == SentenceGenderClass::WomanSet;
    return false;
}

void check_labeled(const std::vector<SentenceGenderClass>& predictions,
                   const std::vector<GenderLabel>& labels, const char* who) {
    if (predictions.empty()) throw InvalidInput(std::string(who) + ": empty input");
    if (predictions.size() != labels.size())
        throw InvalidInput(std::string(who) + ": predictions/labels size mismatch");
    for (GenderLabel l : labels)
        if (l == GenderLabel::Discard)
            throw InvalidInput(std::string(who) + ": labels must be Man or Woman");
}

}  // namespace

double error_rate(const std::vector<SentenceGenderClass>& predictions,
                  const std::vector<GenderLabel>& labels) {
    check_labeled(predictions, labels, "error_rate");
    long errors = 0;
    for (size_t i = 0; i < predictions.size(); ++i) errors += is_error(predictions[i], labels[i]);
    return 100.0 * errors / static_cast<double>(predictions.size());
}

RatioResult ratio_delta(const std::vector<SentenceGenderClass>& predictions,
                        const std::vector<SentenceGenderClass>& reference_sentences) {
    RatioResult r;
    for (SentenceGenderClass c : predictions) {
        r.pred_woman += c == SentenceGenderClass::WomanSet;
        r.pred_man += c == SentenceGenderClass::ManSet;
    }
    for (SentenceGenderClass c : reference_sentences) {
        r.ref_woman += c == SentenceGenderClass::WomanSet;
        r.ref_man += c == SentenceGenderClass::ManSet;
    }
    if (r.pred_man == 0 || r.ref_man == 0) return r;  // undefined, counts attached
    r.pred_ratio = static_cast<double>(r.pred_woman) / r.pred_man;
    r.ref_ratio = static_cast<double>(r.ref_woman) / r.ref_man;
    r.value = r.pred_ratio - r.ref_ratio;
    r.defined = true;
    return r;
}

OutcomeTable outcome_table(const std::vector<SentenceGenderClass>& predictions,
                           const std::vector<GenderLabel>& labels) {
    check_labeled(predictions, labels, "outcome_table");
    long wc = 0, wi = 0, wo = 0, mc = 0, mi = 0, mo = 0;
    for (size_t i = 0; i < predictions.size(); ++i) {
        SentenceGenderClass p = predictions[i];
        if (labels[i] == GenderLabel::Woman) {
            if (p == SentenceGenderClass::WomanSet)
                ++wc;
            else if (is_error(p, labels[i]))
                ++wi;
            else
                ++wo;
        } else {
            if (p == SentenceGenderClass::ManSet)
                ++mc;
            else if (is_error(p, labels[i]))
                ++mi;
            else
                ++mo;
        }
    }
    long wn = wc + wi + wo, mn = mc + mi + mo;
    if (wn == 0 || mn == 0) throw InvalidInput("outcome_table: a gender class is empty");
    OutcomeTable t;
    t.woman = {100.0 * wc / wn, 100.0 * wi / wn, 100.0 * wo / wn, wn};
    t.man = {100.0 * mc / mn, 100.0 * mi / mn, 100.0 * mo / mn, mn};
    return t;
}

double outcome_divergence(const OutcomeTable& table) {
    auto dist = [](const OutcomeRow& r) {
        return std::vector<double>{r.correct / 100.0, r.incorrect / 100.0, r.other / 100.0};
    };
    std::vector<double> p = dist(table.woman), q = dist(table.man);
    auto kl2 = [](const std::vector<double>& a, const std::vector<double>& m) {
        double s = 0.0;
        for (size_t i = 0; i < a.size(); ++i)
            if (a[i] > 0.0) s += a[i] * std::log2(a[i] / m[i]);
        return s;
    };
    std::vector<double> m(p.size());
    for (size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
    double js = 0.5 * kl2(p, m) + 0.5 * kl2(q, m);
    return std::max(0.0, std::min(1.0, js));
}

std::vector<std::pair<int, double>> confidence_curve(const std::vector<SentenceGenderClass>& predictions,
                                                     const std::vector<GenderLabel>& labels,
                                                     const std::vector<int>& caption_mentions,
                                                     const std::vector<int>& thresholds) {
    check_labeled(predictions, labels, "confidence_curve");
    if (caption_mentions.size() != labels.size())
        throw InvalidInput("confidence_curve: mention counts size mismatch");
    std::vector<std::pair<int, double>> curve;
    for (int T : thresholds) {
        long hit = 0;
        for (size_t i = 0; i < predictions.size(); ++i) {
            GenderLabel effective = caption_mentions[i] >= T ? labels[i] : GenderLabel::Discard;
            SentenceGenderClass p = predictions[i];
            bool match;
            if (effective == GenderLabel::Woman)
                match = p == SentenceGenderClass::WomanSet;
            else if (effective == GenderLabel::Man)
                match = p == SentenceGenderClass::ManSet;
            else
                match = p == SentenceGenderClass::Neutral;
            hit += match;
        }
        curve.emplace_back(T, 100.0 * hit / static_cast<double>(predictions.size()));
    }
    return curve;
}

BiasAmplification bias_amplification(const std::vector<std::vector<int>>& predicted_captions,
                                     const std::vector<std::vector<int>>& reference_sentences,
                                     const std::vector<std::string>& objects, const Vocabulary& vocab) {
    BiasAmplification out;
    auto count_pool = [&vocab](const std::vector<std::vector<int>>& pool, int object_id, long& man,
                               long& woman, long& person) {
        for (const auto& cap : pool) {
            if (std::find(cap.begin(), cap.end(), object_id) == cap.end()) continue;
            SentenceGenderClass c = classify_sentence(cap, vocab);
            bool any_person = false;
            for (int t : cap) any_person |= vocab.is_person_word(t);
            if (!any_person) continue;
            ++person;
            man += c == SentenceGenderClass::ManSet;
            woman += c == SentenceGenderClass::WomanSet;
        }
    };

    double sum_m = 0.0, sum_f = 0.0;
    long n_m = 0, n_f = 0;
    for (const auto& name : objects) {
        if (!vocab.contains(name)) {
            out.excluded.push_back(name);
            continue;
        }
        int oid = vocab.id(name);
        long pm = 0, pw = 0, pp = 0, rm = 0, rw = 0, rp = 0;
        count_pool(predicted_captions, oid, pm, pw, pp);
        count_pool(reference_sentences, oid, rm, rw, rp);
        if (pp == 0 || rp == 0) {
            out.excluded.push_back(name);
            continue;
        }
        BiasAmpSide male{true, static_cast<double>(pm) / pp, static_cast<double>(rm) / rp, 0.0};
        male.delta = male.pred_ratio - male.ref_ratio;
        BiasAmpSide female{true, static_cast<double>(pw) / pp, static_cast<double>(rw) / rp, 0.0};
        female.delta = female.pred_ratio - female.ref_ratio;
        out.per_object[name] = {male, female};
        sum_m += std::abs(male.delta);
        sum_f += std::abs(female.delta);
        ++n_m;
        ++n_f;
    }
    out.mean_abs_delta_male = n_m ? sum_m / n_m : 0.0;
    out.mean_abs_delta_female = n_f ? sum_f / n_f : 0.0;
    return out;
}

MaskedRatioResult masked_ratio(const ModelParams& params, const std::vector<const SceneRecord*>& records,
                               const Vocabulary& vocab, int max_len) {
    MaskedRatioResult r;
    for (const SceneRecord* rec : records) {
        ImageF masked = mask_person(rec->image.to_float(), rec->mask);
        std::vector<int> decoded = greedy_decode(masked, params, max_len);
        switch (classify_sentence(decoded, vocab)) {
            case SentenceGenderClass::ManSet: ++r.man_count; break;
            case SentenceGenderClass::WomanSet: ++r.woman_count; break;
            default: ++r.neutral_count; break;
        }
    }
    if (r.woman_count > 0) {
        r.value = static_cast<double>(r.man_count) / r.woman_count;
        r.defined = true;
    }
    return r;
}

namespace {

json ratio_json(const RatioResult& r) {
    return json{{"defined", r.defined},   {"value", r.value},         {"pred_ratio", r.pred_ratio},
                {"ref_ratio", r.ref_ratio}, {"pred_woman", r.pred_woman}, {"pred_man", r.pred_man},
                {"ref_woman", r.ref_woman}, {"ref_man", r.ref_man}};
}

json outcome_json(const OutcomeTable& t) {
    auto row = [](const OutcomeRow& r) {
        return json{{"correct", r.correct}, {"incorrect", r.incorrect}, {"other", r.other}, {"n", r.n}};
    };
    return json{{"woman", row(t.woman)}, {"man", row(t.man)}};
}

}  // namespace

std::string MetricsReport::serialize() const {
    json amp = json::object();
    for (const auto& [name, sides] : bias_amp.per_object) {
        auto side = [](const BiasAmpSide& s) {
            return json{{"pred_ratio", s.pred_ratio}, {"ref_ratio", s.ref_ratio}, {"delta", s.delta}};
        };
        amp[name] = {{"male", side(sides.first)}, {"female", side(sides.second)}};
    }
    json curve = json::array();
    for (const auto& [t, acc] : confidence) curve.push_back({t, acc});
    json j{{"variant", variant},
           {"split", split},
           {"dataset_checksum", dataset_checksum},
           {"checkpoint_id", checkpoint_id},
           {"config_hash", config_hash},
           {"error", error},
           {"ratio_delta", ratio_json(ratio)},
           {"outcome", outcome_json(outcome)},
           {"outcome_divergence", divergence},
           {"confidence_curve", curve},
           {"bias_amplification",
            {{"per_object", amp},
             {"mean_abs_delta_male", bias_amp.mean_abs_delta_male},
             {"mean_abs_delta_female", bias_amp.mean_abs_delta_female},
             {"excluded", bias_amp.excluded}}},
           {"masked_ratio",
            {{"defined", masked.defined},
             {"value", masked.value},
             {"man_count", masked.man_count},
             {"woman_count", masked.woman_count},
             {"neutral_count", masked.neutral_count}}},
           {"pointing", pointing}};
    return j.dump(2);
}

MetricsReport evaluate_model(const ModelParams& params, const Corpus& corpus, Split split,
                             const std::vector<int>& thresholds) {
    auto records = corpus.split_records(split);
    if (records.empty()) throw InvalidInput("evaluate_model: split has no records");

    std::vector<SentenceGenderClass> preds, ref_classes;
    std::vector<GenderLabel> labels;
    std::vector<int> mentions;
    std::vector<std::vector<int>> pred_caps, ref_caps;
    for (const SceneRecord* rec : records) {
        std::vector<int> decoded = greedy_decode(rec->image.to_float(), params, 8);
        preds.push_back(classify_sentence(decoded, corpus.vocab));
        pred_caps.push_back(std::move(decoded));
        labels.push_back(rec->label);
        int n_mention = 0;
        for (const auto& cap : rec->captions) {
            SentenceGenderClass c = classify_sentence(cap, corpus.vocab);
            ref_classes.push_back(c);
            ref_caps.push_back(cap);
            bool mentions_label = (rec->label == GenderLabel::Woman && c == SentenceGenderClass::WomanSet) ||
                                  (rec->label == GenderLabel::Man && c == SentenceGenderClass::ManSet);
            n_mention += mentions_label;
        }
        mentions.push_back(n_mention);
    }

    MetricsReport report;
    report.split = to_string(split);
    report.error = error_rate(preds, labels);
    report.ratio = ratio_delta(preds, ref_classes);
    report.outcome = outcome_table(preds, labels);
    report.divergence = outcome_divergence(report.outcome);
    report.confidence = confidence_curve(preds, labels, mentions, thresholds);
    std::vector<std::string> objects;
    for (const auto& [name, pw] : corpus.config.cooccurrence) objects.push_back(name);
    report.bias_amp = bias_amplification(pred_caps, ref_caps, objects, corpus.vocab);
    report.masked = masked_ratio(params, records, corpus.vocab, 8);
    return report;
}

}  // namespace capbias
