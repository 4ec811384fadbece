#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "frshield/attacks.hpp"
#include "frshield/dataio.hpp"
#include "frshield/defense_fr.hpp"
#include "frshield/experiment.hpp"
#include "frshield/nn.hpp"
#include "frshield/svm.hpp"

namespace py = pybind11;
using namespace frshield;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using LabelArray = py::array_t<int, py::array::c_style | py::array::forcecast>;

// (n, C, H, W) float array -> samples; labels optional.
std::vector<ImageSample> to_samples(const FloatArray& images, const std::optional<LabelArray>& labels) {
  require(images.ndim() == 4, ErrorKind::ShapeMismatch, "images must have shape (n, channels, height, width)");
  const auto n = static_cast<std::size_t>(images.shape(0));
  const Shape shape{static_cast<std::size_t>(images.shape(1)), static_cast<std::size_t>(images.shape(2)),
                    static_cast<std::size_t>(images.shape(3))};
  const std::size_t per = shape_size(shape);
  if (labels) require(labels->ndim() == 1 && static_cast<std::size_t>(labels->shape(0)) == n,
                      ErrorKind::ShapeMismatch, "labels must have one entry per image");
  std::vector<ImageSample> out(n);
  const float* src = images.data();
  for (std::size_t i = 0; i < n; ++i) {
    out[i].pixels = Tensor(shape, std::vector<float>(src + i * per, src + (i + 1) * per));
    out[i].label = labels ? label_from_index(labels->data()[i]) : Label::Pristine;
    out[i].source_id = i;
  }
  return out;
}

py::array_t<float> images_array(const std::vector<ImageSample>& samples, const Shape& fallback) {
  const Shape& s = samples.empty() ? fallback : samples.front().pixels.shape;
  py::array_t<float> out({samples.size(), s[0], s[1], s[2]});
  float* dst = out.mutable_data();
  for (const auto& x : samples) dst = std::copy(x.pixels.data.begin(), x.pixels.data.end(), dst);
  return out;
}

py::array_t<int> labels_array(const std::vector<Label>& labels) {
  py::array_t<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out.mutable_data()[i] = label_index(labels[i]);
  return out;
}

FeatureMatrix to_matrix(const FloatArray& x) {
  require(x.ndim() == 2, ErrorKind::ShapeMismatch, "features must be a 2-d array");
  FeatureMatrix m(static_cast<std::size_t>(x.shape(0)), static_cast<std::size_t>(x.shape(1)));
  std::copy(x.data(), x.data() + m.data.size(), m.data.begin());
  return m;
}

py::array_t<float> matrix_array(const FeatureMatrix& m) {
  py::array_t<float> out({m.rows, m.cols});
  std::copy(m.data.begin(), m.data.end(), out.mutable_data());
  return out;
}

std::vector<Label> to_labels(const LabelArray& y) {
  std::vector<Label> out;
  for (py::ssize_t i = 0; i < y.size(); ++i) out.push_back(label_from_index(y.data()[i]));
  return out;
}

}  // namespace

PYBIND11_MODULE(_frshield, m) {
  m.doc() = "Adversarial transferability experiments on traffic images";

  static py::handle error_type = py::exception<Error>(m, "FrshieldError", PyExc_RuntimeError).release();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = error_type(e.what());
      exc.attr("kind") = error_kind_name(e.kind());
      exc.attr("exit_code") = experiment::exit_code(e.kind());
      PyErr_SetObject(error_type.ptr(), exc.ptr());
    }
  });

  py::class_<config::ExperimentConfig>(m, "Config")
      .def_static("parse", &config::parse_config, py::arg("text"), py::arg("base_dir") = std::filesystem::path{})
      .def_static("load", &config::load_config, py::arg("path"))
      .def_readwrite("seed", &config::ExperimentConfig::seed)
      .def_readwrite("out", &config::ExperimentConfig::out)
      .def_readwrite("jobs", &config::ExperimentConfig::jobs)
      .def("validate", &config::ExperimentConfig::validate)
      .def("to_text", [](const config::ExperimentConfig& c) { return config::to_text(c); });

  m.def("run_experiment", [](const config::ExperimentConfig& c) {
    py::gil_scoped_release release;
    return report::summary_json(experiment::run_experiment(c));
  }, "Runs every configured stage; returns the summary as JSON text.");

  m.def("run_stage", [](const config::ExperimentConfig& c, const std::string& stage) {
    py::gil_scoped_release release;
    if (stage == "data") experiment::run_stage(c, stage, [&] { experiment::run_data(c); });
    else if (stage == "train") experiment::run_stage(c, stage, [&] { experiment::run_train(c); });
    else if (stage == "attack") experiment::run_stage(c, stage, [&] { experiment::run_attack(c); });
    else if (stage == "mpa") experiment::run_stage(c, stage, [&] { experiment::run_mpa(c); });
    else if (stage == "fr-train") experiment::run_stage(c, stage, [&] { experiment::run_fr_train(c); });
    else if (stage == "fr-eval-match")
      experiment::run_stage(c, stage, [&] { experiment::run_fr_eval(c, fr::Protocol::Match); });
    else if (stage == "fr-eval-mismatch")
      experiment::run_stage(c, stage, [&] { experiment::run_fr_eval(c, fr::Protocol::Mismatch); });
    else if (stage == "report") experiment::run_stage(c, stage, [&] { experiment::run_report(c); });
    else fail(ErrorKind::InvalidArgument, "unknown stage '" + stage + "'");
  }, py::arg("config"), py::arg("stage"));

  m.def("build_report", [](const config::ExperimentConfig& c) {
    return report::summary_json(experiment::build_report(c));
  });

  m.def("synth_generate", [](std::size_t count, double separation, std::uint64_t seed) {
    const auto samples = data::synth_generate(count, separation, seed);
    std::vector<Label> labels;
    for (const auto& s : samples) labels.push_back(s.label);
    return py::make_tuple(images_array(samples, {1, kImageSide, kImageSide}), labels_array(labels));
  }, py::arg("count"), py::arg("separation") = 4.0, py::arg("seed") = 0);

  py::class_<nn::TrainedModel>(m, "Model")
      .def_static("load", &nn::load_model, py::arg("path"))
      .def_static("init", [](const std::string& preset, std::uint64_t seed) {
        return nn::init_model(nn::preset(preset), seed, preset);
      }, py::arg("preset"), py::arg("seed") = 0)
      .def_static("train", [](const std::string& preset, const FloatArray& x, const LabelArray& y,
                              const FloatArray& vx, const LabelArray& vy, std::size_t epochs, std::size_t batch,
                              double learning_rate, std::uint64_t seed) {
        DatasetSplit split;
        split.train = to_samples(x, y);
        split.validation = to_samples(vx, vy);
        nn::TrainConfig c;
        c.epochs = epochs;
        c.batch = batch;
        c.learning_rate = learning_rate;
        c.seed = seed;
        py::gil_scoped_release release;
        return nn::train(nn::preset(preset), split, c, preset);
      }, py::arg("preset"), py::arg("images"), py::arg("labels"), py::arg("val_images"), py::arg("val_labels"),
         py::arg("epochs") = 20, py::arg("batch") = 64, py::arg("learning_rate") = 1e-3, py::arg("seed") = 0)
      .def("save", [](const nn::TrainedModel& model, const std::filesystem::path& p) { nn::save_model(model, p); })
      .def_readonly("id", &nn::TrainedModel::id)
      .def_property_readonly("parameter_count", &nn::TrainedModel::parameter_count)
      .def_property_readonly("flatten_width", [](const nn::TrainedModel& model) { return model.spec.flatten_width(); })
      .def_property_readonly("history", [](const nn::TrainedModel& model) {
        py::list out;
        for (const auto& e : model.history)
          out.append(py::dict(py::arg("train_loss") = e.train_loss, py::arg("train_accuracy") = e.train_accuracy,
                              py::arg("val_loss") = e.val_loss, py::arg("val_accuracy") = e.val_accuracy));
        return out;
      })
      .def("predict", [](const nn::TrainedModel& model, const FloatArray& x) {
        return labels_array(nn::predict_labels(model, to_samples(x, std::nullopt)));
      })
      .def("logits", [](const nn::TrainedModel& model, const FloatArray& x) {
        const auto samples = to_samples(x, std::nullopt);
        py::array_t<float> out({samples.size(), std::size_t{2}});
        for (std::size_t i = 0; i < samples.size(); ++i) {
          const auto z = nn::logits(model, samples[i].pixels.data);
          out.mutable_at(i, 0) = z[0];
          out.mutable_at(i, 1) = z[1];
        }
        return out;
      })
      .def("accuracy", [](const nn::TrainedModel& model, const FloatArray& x, const LabelArray& y) {
        return nn::accuracy(model, to_samples(x, y));
      })
      .def("flatten_features", [](const nn::TrainedModel& model, const FloatArray& x) {
        return matrix_array(nn::extract_flatten_features(model, to_samples(x, std::nullopt)));
      });

  m.def("attack_names", &attacks::registered_attack_names);

  m.def("attack", [](const nn::TrainedModel& model, const FloatArray& x, const LabelArray& y, const std::string& name,
                     std::uint64_t seed, unsigned jobs) {
    auto spec = attacks::spec_from_name(name);
    spec.seed = seed;
    const auto samples = to_samples(x, y);
    attacks::BatchAttackReport rep;
    {
      py::gil_scoped_release release;
      rep = attacks::attack_batch(model, samples, spec, jobs);
    }
    py::array_t<bool> success(rep.results.size());
    for (std::size_t i = 0; i < rep.results.size(); ++i) success.mutable_data()[i] = rep.results[i].success;
    return py::dict(py::arg("adversarial") = images_array(attacks::adversarial_samples(rep), model.spec.input_shape),
                    py::arg("success") = success, py::arg("asr") = rep.asr, py::arg("psnr") = rep.psnr,
                    py::arg("l1") = rep.l1, py::arg("max_dist") = rep.max_dist);
  }, py::arg("model"), py::arg("images"), py::arg("labels"), py::arg("name"), py::arg("seed") = 0,
     py::arg("jobs") = 1);

  m.def("perturbation_metrics", [](const FloatArray& original, const FloatArray& adversarial) {
    require(original.size() == adversarial.size(), ErrorKind::ShapeMismatch, "arrays differ in size");
    const Tensor a({static_cast<std::size_t>(original.size())},
                   std::vector<float>(original.data(), original.data() + original.size()));
    const Tensor b({static_cast<std::size_t>(adversarial.size())},
                   std::vector<float>(adversarial.data(), adversarial.data() + adversarial.size()));
    const auto r = attacks::perturbation_metrics(a, b);
    return py::dict(py::arg("psnr") = r.psnr, py::arg("l1") = r.l1, py::arg("max_dist") = r.max_dist);
  });

  m.def("rbf_kernel", [](const FloatArray& x, const FloatArray& y, double gamma) {
    require(x.size() == y.size(), ErrorKind::ShapeMismatch, "vectors differ in length");
    return svm::rbf_kernel({x.data(), static_cast<std::size_t>(x.size())},
                           {y.data(), static_cast<std::size_t>(y.size())}, gamma);
  });

  m.def("svm_fit_predict", [](const FloatArray& x, const LabelArray& y, double C, double gamma,
                              const FloatArray& x_test) {
    const auto model = svm::train_smo(to_matrix(x), to_labels(y), svm::RbfParams{C, gamma});
    return labels_array(svm::svm_predict(model, to_matrix(x_test)));
  }, py::arg("features"), py::arg("labels"), py::arg("C"), py::arg("gamma"), py::arg("test_features"));

  m.def("draw_subsets", [](std::size_t n, std::size_t f, std::size_t count, std::uint64_t seed) {
    std::vector<std::vector<std::size_t>> out;
    for (const auto& s : fr::draw_subsets(n, f, count, seed)) out.push_back(s.indices);
    return out;
  }, py::arg("n"), py::arg("f"), py::arg("count") = fr::kEnsembleSize, py::arg("seed") = 0);

  m.def("mismatch_score", &fr::mismatch_score, py::arg("grid"));
  m.def("match_score", [](const std::vector<double>& paired) { return fr::match_score(paired); });
  m.def("security_verdict", [](double score) { return std::string(fr::verdict_name(fr::security_verdict(score))); });
}
