#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "capbias/dataset.hpp"
#include "capbias/losses.hpp"
#include "capbias/metrics.hpp"
#include "capbias/model.hpp"
#include "capbias/saliency.hpp"
#include "capbias/training.hpp"

namespace py = pybind11;
using namespace capbias;

namespace {

py::array_t<uint8_t> image_array(const ImageU8& img) {
    py::array_t<uint8_t> arr({img.h, img.w, img.c});
    std::memcpy(arr.mutable_data(), img.bytes.data(), img.bytes.size());
    return arr;
}

py::array_t<uint8_t> mask_array(const PersonMask& mask) {
    py::array_t<uint8_t> arr({mask.h, mask.w});
    std::memcpy(arr.mutable_data(), mask.m.data(), mask.m.size());
    return arr;
}

ImageF imagef_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() != 3) throw InvalidInput("image array must be HxWxC");
    ImageF img(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)),
               static_cast<int>(arr.shape(2)));
    std::memcpy(img.v.data(), arr.data(), sizeof(double) * img.v.size());
    return img;
}

PersonMask mask_from_array(const py::array_t<uint8_t, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() != 2 || arr.shape(0) != kImageSize || arr.shape(1) != kImageSize)
        throw InvalidInput("mask array must be 64x64");
    PersonMask mask;
    const uint8_t* data = arr.data();
    for (size_t i = 0; i < mask.m.size(); ++i) mask.m[i] = data[i] ? 1 : 0;
    return mask;
}

py::array_t<double> imagef_array(const ImageF& img) {
    py::array_t<double> arr({img.h, img.w, img.c});
    std::memcpy(arr.mutable_data(), img.v.data(), sizeof(double) * img.v.size());
    return arr;
}

py::array_t<double> dists_array(const WordDists& dists) {
    if (dists.empty()) return py::array_t<double>(std::vector<py::ssize_t>{0, 0});
    py::array_t<double> arr({static_cast<int>(dists.size()), static_cast<int>(dists[0].size())});
    double* out = arr.mutable_data();
    for (const auto& row : dists) {
        std::memcpy(out, row.data(), sizeof(double) * row.size());
        out += row.size();
    }
    return arr;
}

WordDists dists_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() != 2) throw InvalidInput("distributions must be a TxV array");
    WordDists dists(arr.shape(0), std::vector<double>(arr.shape(1)));
    const double* in = arr.data();
    for (auto& row : dists) {
        std::copy(in, in + row.size(), row.begin());
        in += row.size();
    }
    return dists;
}

py::array_t<double> grid_array(const SaliencyMap& map) {
    py::array_t<double> arr({map.g, map.g});
    std::memcpy(arr.mutable_data(), map.grid.data(), sizeof(double) * map.grid.size());
    return arr;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "captioning bias laboratory: dataset generation, losses, training, metrics, saliency";

    py::register_exception<InvalidInput>(m, "InvalidInputError", PyExc_ValueError);
    py::register_exception<NumericFailure>(m, "NumericFailureError", PyExc_ArithmeticError);
    py::register_exception<IoError>(m, "IoError", PyExc_IOError);

    py::class_<Vocabulary>(m, "Vocabulary")
        .def_static("caption_vocab", &Vocabulary::caption_vocab, py::arg("multiword_gender_sets") = false)
        .def("size", &Vocabulary::size)
        .def("id", &Vocabulary::id)
        .def("token", &Vocabulary::token)
        .def("hash", &Vocabulary::hash)
        .def_property_readonly("bos", &Vocabulary::bos)
        .def_property_readonly("eos", &Vocabulary::eos)
        .def_property_readonly("tokens", &Vocabulary::tokens)
        .def_property_readonly("woman_set", &Vocabulary::woman_set)
        .def_property_readonly("man_set", &Vocabulary::man_set)
        .def_property_readonly("neutral_set", &Vocabulary::neutral_set)
        .def("is_gendered", &Vocabulary::is_gendered);

    py::enum_<GenderLabel>(m, "GenderLabel")
        .value("Man", GenderLabel::Man)
        .value("Woman", GenderLabel::Woman)
        .value("Discard", GenderLabel::Discard);
    py::enum_<Evidence>(m, "Evidence")
        .value("Woman", Evidence::Woman)
        .value("Man", Evidence::Man)
        .value("Occluded", Evidence::Occluded);
    py::enum_<Split>(m, "Split")
        .value("Train", Split::Train)
        .value("TestBias", Split::TestBias)
        .value("TestBalanced", Split::TestBalanced)
        .value("Discard", Split::Discard)
        .value("Unused", Split::Unused);

    py::class_<BiasConfig>(m, "BiasConfig")
        .def(py::init<>())
        .def_readwrite("woman_fraction", &BiasConfig::woman_fraction)
        .def_readwrite("evidence_occlusion_prob", &BiasConfig::evidence_occlusion_prob)
        .def_readwrite("annotator_mention_prob", &BiasConfig::annotator_mention_prob)
        .def_readwrite("seed", &BiasConfig::seed)
        .def_readwrite("multiword_gender_sets", &BiasConfig::multiword_gender_sets)
        .def_readwrite("glyph_contrast", &BiasConfig::glyph_contrast)
        .def_readwrite("pixel_noise", &BiasConfig::pixel_noise)
        .def_readwrite("cooccurrence", &BiasConfig::cooccurrence);

    py::class_<SceneRecord>(m, "SceneRecord")
        .def_readonly("id", &SceneRecord::id)
        .def_readonly("captions", &SceneRecord::captions)
        .def_readonly("true_evidence", &SceneRecord::true_evidence)
        .def_readonly("context_objects", &SceneRecord::context_objects)
        .def_readonly("split", &SceneRecord::split)
        .def_readonly("label", &SceneRecord::label)
        .def_property_readonly("image", [](const SceneRecord& r) { return image_array(r.image); })
        .def_property_readonly("mask", [](const SceneRecord& r) { return mask_array(r.mask); })
        .def_property_readonly("image_float",
                               [](const SceneRecord& r) { return imagef_array(r.image.to_float()); });

    py::class_<SplitSpec>(m, "SplitSpec")
        .def(py::init<>())
        .def_readwrite("balanced_per_gender", &SplitSpec::balanced_per_gender)
        .def_readwrite("test_bias_size", &SplitSpec::test_bias_size)
        .def_readwrite("train_size", &SplitSpec::train_size)
        .def_readwrite("include_discards", &SplitSpec::include_discards);

    py::class_<Corpus>(m, "Corpus")
        .def_readonly("vocab", &Corpus::vocab)
        .def_readonly("records", &Corpus::records)
        .def("save", [](const Corpus& c, const std::string& dir) { save_dataset(c, dir); })
        .def_static("load", &load_dataset);

    m.def("generate_corpus", &generate_corpus, py::arg("config"), py::arg("n"));
    m.def("make_splits", [](Corpus& corpus, const SplitSpec& spec, uint64_t seed) {
        Rng rng(seed);
        make_splits(corpus, spec, rng);
    });
    m.def("dataset_checksum", [](const std::string& dir) { return to_hex(dataset_checksum(dir)); });
    m.def("derive_gender_label", &derive_gender_label);
    m.def("mask_person",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& image,
             const py::array_t<uint8_t, py::array::c_style | py::array::forcecast>& mask) {
              return imagef_array(mask_person(imagef_from_array(image), mask_from_array(mask)));
          });

    py::class_<ModelParams>(m, "ModelParams")
        .def_property_readonly("vocab_hash", [](const ModelParams& p) { return p.vocab_hash; })
        .def("total_params", &ModelParams::total_params)
        .def("save", [](const ModelParams& p, const std::string& path) { save_checkpoint(path, p); })
        .def_static("load", [](const std::string& path) { return load_checkpoint(path); })
        .def_static("init", [](const Vocabulary& vocab, uint64_t seed) {
            ModelConfig cfg;
            cfg.vocab_size = vocab.size();
            cfg.bos_id = vocab.bos();
            cfg.eos_id = vocab.eos();
            return ModelParams::init(cfg, vocab.hash(), seed);
        });

    m.def("forward_teacher_forced",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& image,
             const std::vector<int>& caption, const ModelParams& params) {
              return dists_array(forward_teacher_forced(imagef_from_array(image), caption, params));
          });
    m.def("greedy_decode",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& image,
             const ModelParams& params, int max_len) {
              return greedy_decode(imagef_from_array(image), params, max_len);
          },
          py::arg("image"), py::arg("params"), py::arg("max_len") = 8);

    py::class_<LossWeights>(m, "LossWeights")
        .def(py::init<>())
        .def_readwrite("alpha", &LossWeights::alpha)
        .def_readwrite("beta", &LossWeights::beta)
        .def_readwrite("mu", &LossWeights::mu)
        .def_readwrite("epsilon", &LossWeights::epsilon)
        .def_readwrite("upweight_factor", &LossWeights::upweight_factor);

    m.def("cross_entropy",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& dists,
             const std::vector<int>& caption) { return cross_entropy(dists_from_array(dists), caption); });
    m.def("confusion", [](const std::vector<double>& dist, const Vocabulary& vocab) {
        return confusion(dist, vocab);
    });
    m.def("appearance_confusion_loss",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& dists,
             const std::vector<int>& caption, const Vocabulary& vocab) {
              return appearance_confusion_loss(dists_from_array(dists), caption, vocab);
          });
    m.def("masked_nongender_ce",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& dists,
             const std::vector<int>& caption, const Vocabulary& vocab) {
              return masked_nongender_ce(dists_from_array(dists), caption, vocab);
          });
    m.def("confidence_quotients", &confidence_quotients, py::arg("dist"), py::arg("vocab"),
          py::arg("epsilon") = 1e-6);
    m.def("confident_loss",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& dists,
             const std::vector<int>& caption, const Vocabulary& vocab, double epsilon) {
              return confident_loss(dists_from_array(dists), caption, vocab, epsilon);
          },
          py::arg("dists"), py::arg("caption"), py::arg("vocab"), py::arg("epsilon") = 1e-6);
    m.def("upweight_loss",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& dists,
             const std::vector<int>& caption, const Vocabulary& vocab, double factor) {
              return upweight_loss(dists_from_array(dists), caption, vocab, factor);
          });
    m.def("total_loss", [](double ce, double acl, double masked_ce, double conf, const LossWeights& w) {
        LossBundle b = total_loss(ce, acl, masked_ce, conf, w);
        py::dict d;
        d["ce"] = b.ce;
        d["ce_unmasked"] = b.ce_unmasked;
        d["ce_masked"] = b.ce_masked;
        d["acl"] = b.acl;
        d["conf"] = b.conf;
        d["total"] = b.total;
        return d;
    });

    py::enum_<Variant>(m, "Variant")
        .value("BaselineFT", Variant::BaselineFT)
        .value("Balanced", Variant::Balanced)
        .value("UpWeight", Variant::UpWeight)
        .value("EqualizerWoACL", Variant::EqualizerWoACL)
        .value("EqualizerWoConf", Variant::EqualizerWoConf)
        .value("Equalizer", Variant::Equalizer);

    py::class_<TrainResult>(m, "TrainResult")
        .def_readonly("loss_trace", &TrainResult::loss_trace)
        .def_readonly("diverged", &TrainResult::diverged)
        .def_readonly("woman_visits", &TrainResult::woman_visits)
        .def_readonly("man_visits", &TrainResult::man_visits)
        .def_property_readonly("params", [](const TrainResult& r) { return r.params; });

    m.def("train",
          [](const Corpus& corpus, Variant variant, uint64_t seed, int iterations, double lr, int batch) {
              ExperimentConfig cfg;
              cfg.variant = variant;
              cfg.seed = seed;
              cfg.opt.iterations = iterations;
              cfg.opt.learning_rate = lr;
              cfg.opt.batch_size = batch;
              return train(corpus, cfg);
          },
          py::arg("corpus"), py::arg("variant"), py::arg("seed") = 0, py::arg("iterations") = 500,
          py::arg("lr") = 0.08, py::arg("batch") = 8);

    py::enum_<SentenceGenderClass>(m, "SentenceGenderClass")
        .value("WomanSet", SentenceGenderClass::WomanSet)
        .value("ManSet", SentenceGenderClass::ManSet)
        .value("Neutral", SentenceGenderClass::Neutral)
        .value("Mixed", SentenceGenderClass::Mixed);

    m.def("classify_sentence", &classify_sentence);
    m.def("error_rate", &error_rate);
    m.def("evaluate_model",
          [](const ModelParams& params, const Corpus& corpus, Split split) {
              return evaluate_model(params, corpus, split).serialize();
          },
          "returns the MetricsReport as a JSON string");

    py::enum_<SaliencyMethod>(m, "SaliencyMethod")
        .value("Occlusion", SaliencyMethod::Occlusion)
        .value("GradCam", SaliencyMethod::GradCam);

    m.def("occlusion_saliency",
          [](const ModelParams& params,
             const py::array_t<double, py::array::c_style | py::array::forcecast>& image,
             const std::vector<int>& caption, int target_position, const Vocabulary& vocab,
             int grid_side) {
              return grid_array(
                  occlusion_saliency(params, imagef_from_array(image), caption, target_position, vocab, grid_side));
          },
          py::arg("params"), py::arg("image"), py::arg("caption"), py::arg("target_position"),
          py::arg("vocab"), py::arg("grid_side") = 8);
    m.def("grad_cam",
          [](const ModelParams& params,
             const py::array_t<double, py::array::c_style | py::array::forcecast>& image,
             const std::vector<int>& caption, int target_position, const Vocabulary& vocab) {
              return grid_array(grad_cam(params, imagef_from_array(image), caption, target_position, vocab));
          });
    m.def("pointing",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& map_grid,
             const py::array_t<uint8_t, py::array::c_style | py::array::forcecast>& mask) {
              if (map_grid.ndim() != 2 || map_grid.shape(0) != map_grid.shape(1))
                  throw InvalidInput("pointing: map must be a square grid");
              SaliencyMap map;
              map.g = static_cast<int>(map_grid.shape(0));
              map.grid.assign(map_grid.data(), map_grid.data() + map.g * map.g);
              return pointing(map, mask_from_array(mask));
          });
}
