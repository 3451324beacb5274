// Command-line entry point: corpus synthesis, verification-model pretraining,
// joint conversion training, conversion, objective evaluation, and embedding
// export/projection. Every artifact embeds the hash of the configuration
// that produced it; reruns with identical inputs and seeds are byte-identical.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "dgcvc/asv.hpp"
#include "dgcvc/checkpoint.hpp"
#include "dgcvc/config.hpp"
#include "dgcvc/conversion.hpp"
#include "dgcvc/corpus.hpp"
#include "dgcvc/evaluation.hpp"
#include "dgcvc/rng.hpp"
#include "dgcvc/signal.hpp"
#include "dgcvc/speaker_encoder.hpp"
#include "dgcvc/training.hpp"

namespace fs = std::filesystem;
using namespace dgcvc;

namespace {

std::string resolve_out(const std::string& path) {
  const char* root = std::getenv("DGCVC_OUT_ROOT");
  if (root && *root && !fs::path(path).is_absolute()) return (fs::path(root) / path).string();
  return path;
}

void ensure_parent(const std::string& path) {
  const fs::path p = fs::path(path).parent_path();
  if (!p.empty()) fs::create_directories(p);
}

void echo_config(const config::RunConfig& cfg) {
  std::cout << "# resolved config (hash " << cfg.hash() << ")\n" << cfg.canonical() << std::flush;
}

// hash of the [features] section alone; ties feature extraction between the
// verification checkpoint and the conversion run
uint64_t features_hash(const config::RunConfig& cfg) {
  const std::string text = cfg.canonical();
  const auto start = text.find("[features]");
  const auto end = text.find("\n[", start);
  return hash_str(text.substr(start, end - start));
}

std::vector<std::vector<std::string>> read_csv(const std::string& path, size_t min_cols) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open manifest: " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cols.push_back(cell);
    if (cols.size() < min_cols)
      throw std::runtime_error("manifest row has " + std::to_string(cols.size()) + " columns, expected >= " +
                               std::to_string(min_cols) + ": " + line);
    rows.push_back(std::move(cols));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// checkpoint assembly / reload
// ---------------------------------------------------------------------------

void save_asv_checkpoint(const std::string& path, const config::RunConfig& cfg, asv::AsvModel& model, nn::Adam& opt,
                         int64_t step) {
  ckpt::Checkpoint c;
  c.config_text = cfg.canonical();
  c.config_hash = cfg.hash();
  c.step = step;
  c.meta["kind"] = "asv";
  c.meta["features_hash"] = std::to_string(features_hash(cfg));
  ckpt::put_params(c, model.params());
  ckpt::put_adam(c, opt);
  ensure_parent(path);
  c.save(path);
}

struct LoadedAsv {
  config::RunConfig cfg;
  std::unique_ptr<asv::AsvModel> model;
  ckpt::Checkpoint raw;
};

LoadedAsv load_asv_checkpoint(const std::string& path) {
  LoadedAsv out{config::RunConfig{}, nullptr, ckpt::Checkpoint::load(path)};
  if (out.raw.meta.count("kind") == 0 || out.raw.meta.at("kind") != "asv")
    throw std::runtime_error("checkpoint is not a verification-model checkpoint: " + path);
  out.cfg = config::RunConfig::from_text(out.raw.config_text);
  out.model = std::make_unique<asv::AsvModel>(out.cfg.asv, out.cfg.training.seed);
  ckpt::load_params(out.raw, out.model->params());
  out.model->freeze();
  return out;
}

struct VcModels {
  std::unique_ptr<asv::AsvModel> asv_model;  // frozen copy travels with the checkpoint
  std::unique_ptr<conv::ConversionModel> cm;
  std::unique_ptr<spk::SpeakerEncoder> se;
  std::unique_ptr<train::AuxClassifier> cls;
};

VcModels build_vc_models(const config::RunConfig& cfg, const asv::AsvModel* frozen_asv, int n_classes) {
  VcModels m;
  const spk::Variant variant = cfg.training.variant;
  if (spk::variant_needs_asv(variant)) {
    if (!frozen_asv)
      throw std::runtime_error("variant '" + spk::variant_name(variant) +
                               "' requires --asv with a pretrained checkpoint");
    m.asv_model = std::make_unique<asv::AsvModel>(cfg.asv, cfg.training.seed);
    nn::ParamList dst = m.asv_model->params();
    nn::ParamList src = const_cast<asv::AsvModel*>(frozen_asv)->params();
    if (dst.size() != src.size()) throw std::runtime_error("verification model architecture mismatch");
    for (size_t i = 0; i < dst.size(); ++i) {
      if (!dst[i].p->value.same_shape(src[i].p->value))
        throw std::runtime_error("verification checkpoint does not match the configured architecture (parameter " +
                                 dst[i].name + ")");
      dst[i].p->value = src[i].p->value;
    }
    m.asv_model->freeze();
  }
  m.cm = std::make_unique<conv::ConversionModel>(cfg.conversion, cfg.training.seed);
  m.se = std::make_unique<spk::SpeakerEncoder>(cfg.spkenc, variant, cfg.features.n_mels, m.asv_model.get(),
                                               cfg.training.seed);
  if (variant == spk::Variant::kDgc)
    m.cls = std::make_unique<train::AuxClassifier>(cfg.spkenc.embed_dim, n_classes, cfg.training.seed);
  return m;
}

void save_vc_checkpoint(const std::string& path, const config::RunConfig& cfg, VcModels& m, nn::Adam& opt,
                        int64_t step, uint64_t asv_features_hash, int n_classes) {
  ckpt::Checkpoint c;
  c.config_text = cfg.canonical();
  c.config_hash = cfg.hash();
  c.step = step;
  c.meta["kind"] = "vc";
  c.meta["variant"] = spk::variant_name(cfg.training.variant);
  c.meta["features_hash"] = std::to_string(features_hash(cfg));
  c.meta["asv_features_hash"] = std::to_string(asv_features_hash);
  c.meta["n_classes"] = std::to_string(n_classes);
  ckpt::put_params(c, m.cm->params());
  ckpt::put_buffers(c, m.cm->buffers());
  ckpt::put_params(c, m.se->params());
  ckpt::put_buffers(c, m.se->buffers());
  if (m.cls) ckpt::put_params(c, m.cls->params());
  if (m.asv_model) ckpt::put_params(c, m.asv_model->params());
  ckpt::put_adam(c, opt);
  ensure_parent(path);
  c.save(path);
}

struct LoadedVc {
  config::RunConfig cfg;
  VcModels models;
  ckpt::Checkpoint raw;
};

LoadedVc load_vc_checkpoint(const std::string& path) {
  LoadedVc out{config::RunConfig{}, VcModels{}, ckpt::Checkpoint::load(path)};
  if (out.raw.meta.count("kind") == 0 || out.raw.meta.at("kind") != "vc")
    throw std::runtime_error("checkpoint is not a conversion checkpoint: " + path);
  out.cfg = config::RunConfig::from_text(out.raw.config_text);
  const int n_classes = std::stoi(out.raw.meta.at("n_classes"));
  const spk::Variant variant = out.cfg.training.variant;

  if (spk::variant_needs_asv(variant)) {
    out.models.asv_model = std::make_unique<asv::AsvModel>(out.cfg.asv, out.cfg.training.seed);
    ckpt::load_params(out.raw, out.models.asv_model->params());
    out.models.asv_model->freeze();
  }
  out.models.cm = std::make_unique<conv::ConversionModel>(out.cfg.conversion, out.cfg.training.seed);
  out.models.se = std::make_unique<spk::SpeakerEncoder>(out.cfg.spkenc, variant, out.cfg.features.n_mels,
                                                        out.models.asv_model.get(), out.cfg.training.seed);
  ckpt::load_params(out.raw, out.models.cm->params());
  ckpt::load_buffers(out.raw, out.models.cm->buffers());
  ckpt::load_params(out.raw, out.models.se->params());
  ckpt::load_buffers(out.raw, out.models.se->buffers());
  if (variant == spk::Variant::kDgc && n_classes >= 2) {
    out.models.cls =
        std::make_unique<train::AuxClassifier>(out.cfg.spkenc.embed_dim, n_classes, out.cfg.training.seed);
    ckpt::load_params(out.raw, out.models.cls->params());
  }
  return out;
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

int cmd_synth_corpus(const std::string& out_dir, int speakers, int utts, uint64_t seed) {
  corpus::Corpus c = corpus::synth_toy_corpus(speakers, utts, seed, resolve_out(out_dir));
  std::cout << "synthesized " << c.speakers.size() << " speakers, " << c.total_utterances() << " utterances under "
            << c.root << "\n";
  return 0;
}

int cmd_train_asv(const std::string& config_path, const std::string& corpus_root, const std::string& out_path,
                  int train_speakers, const std::string& resume_path) {
  config::RunConfig cfg = config::RunConfig::from_file(config_path);
  echo_config(cfg);
  corpus::Corpus c = corpus::load_corpus(corpus_root);
  if (train_speakers > 0) corpus::make_splits(c, train_speakers, cfg.training.seed);

  asv::AsvModel model(cfg.asv, cfg.training.seed);
  nn::Adam opt(cfg.asv.lr);
  int start_step = 0;
  if (!resume_path.empty()) {
    LoadedAsv prev = load_asv_checkpoint(resume_path);
    if (prev.cfg.hash() != cfg.hash())
      throw std::runtime_error("resume checkpoint was produced by a different configuration");
    ckpt::load_params(prev.raw, model.params());
    ckpt::load_adam(prev.raw, opt);
    start_step = static_cast<int>(prev.raw.step);
  }

  auto log = asv::train_asv(model, opt, c, cfg.features, cfg.training.seed, start_step);
  const std::string out = resolve_out(out_path);
  model.freeze();
  save_asv_checkpoint(out, cfg, model, opt, cfg.asv.steps);

  std::ofstream losses(out + ".losses.csv");
  losses << "step,ge2e_loss\n";
  losses.precision(17);
  for (auto& [step, loss] : log.steps) losses << step << "," << loss << "\n";
  std::cout << "wrote " << out << "\n";
  return 0;
}

std::vector<train::TrainSample> load_train_set(const corpus::Corpus& c, const signal::FeatureConfig& fc,
                                               std::vector<std::string>* speaker_ids) {
  std::vector<int> idx = c.has_splits ? c.train_speakers : std::vector<int>{};
  if (idx.empty()) {
    idx.resize(c.speakers.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  }
  std::vector<train::TrainSample> ds;
  for (size_t k = 0; k < idx.size(); ++k) {
    const auto& spk = c.speakers[idx[k]];
    if (speaker_ids) speaker_ids->push_back(spk.id);
    for (const auto& utt : spk.utterances) {
      train::TrainSample s;
      s.label = static_cast<int>(k);
      s.mel = signal::compute_mel(signal::load_wav(utt, fc.sample_rate), fc).frames;
      ds.push_back(std::move(s));
    }
  }
  return ds;
}

int cmd_train_vc(const std::string& config_path, const std::string& variant_flag, const std::string& asv_path,
                 const std::string& corpus_root, const std::string& out_path, int train_speakers) {
  config::RunConfig cfg = config::RunConfig::from_file(config_path);
  if (!variant_flag.empty()) {
    cfg.training.variant = spk::parse_variant(variant_flag);
    cfg.validate();
  }
  echo_config(cfg);
  const spk::Variant variant = cfg.training.variant;

  std::unique_ptr<asv::AsvModel> frozen;
  uint64_t asv_feat_hash = features_hash(cfg);
  if (spk::variant_needs_asv(variant)) {
    if (asv_path.empty())
      throw std::runtime_error("variant '" + spk::variant_name(variant) +
                               "' requires --asv with a pretrained verification checkpoint");
    LoadedAsv loaded = load_asv_checkpoint(asv_path);
    asv_feat_hash = std::stoull(loaded.raw.meta.at("features_hash"));
    if (asv_feat_hash != features_hash(cfg))
      throw std::runtime_error("verification checkpoint feature configuration differs from this run's");
    if (loaded.cfg.asv.proj != cfg.asv.proj || loaded.cfg.asv.embed_dim != cfg.asv.embed_dim ||
        loaded.cfg.asv.hidden != cfg.asv.hidden || loaded.cfg.asv.layers != cfg.asv.layers)
      throw std::runtime_error("verification checkpoint architecture differs from the configured one");
    frozen = std::move(loaded.model);
  }

  corpus::Corpus c = corpus::load_corpus(corpus_root);
  if (train_speakers > 0) corpus::make_splits(c, train_speakers, cfg.training.seed);
  std::vector<std::string> speaker_ids;
  auto dataset = load_train_set(c, cfg.features, &speaker_ids);
  if (speaker_ids.size() < 2) throw std::runtime_error("conversion training needs at least two speakers");

  VcModels models = build_vc_models(cfg, frozen.get(), static_cast<int>(speaker_ids.size()));
  train::VcTrainer trainer(models.cm.get(), models.se.get(), models.cls.get(), cfg.training, cfg.features);

  const std::string out = resolve_out(out_path);
  ensure_parent(out);
  std::ofstream losses(out + ".losses.csv");
  losses << "step,l_rec,l_class,total\n";
  losses.precision(17);

  double best_interval = std::numeric_limits<double>::infinity();
  double interval_sum = 0.0;
  int interval_n = 0;
  for (int step = 0; step < cfg.training.steps; ++step) {
    train::StepLosses l = trainer.step(dataset, step);
    losses << step << "," << l.rec << "," << l.cls << "," << l.total << "\n";
    interval_sum += l.total;
    ++interval_n;
    const bool at_checkpoint = (step + 1) % cfg.training.checkpoint_every == 0 || step + 1 == cfg.training.steps;
    if (at_checkpoint) {
      save_vc_checkpoint(out, cfg, models, trainer.optimizer(), step + 1, asv_feat_hash,
                         static_cast<int>(speaker_ids.size()));
      const double avg = interval_sum / interval_n;
      if (avg < best_interval) {
        best_interval = avg;
        save_vc_checkpoint(out + ".best", cfg, models, trainer.optimizer(), step + 1, asv_feat_hash,
                           static_cast<int>(speaker_ids.size()));
      }
      interval_sum = 0.0;
      interval_n = 0;
    }
  }
  std::cout << "wrote " << out << "\n";
  return 0;
}

// conversion used by both cmd_convert and cmd_evaluate
Mat convert_mel(LoadedVc& vc, const Mat& src_mel, const Mat& ref_mel) {
  const double pad = std::log(vc.cfg.features.log_floor);
  // source embedding comes from the source utterance itself
  Mat spk_src = vc.models.se->embed_utterance(src_mel, pad);
  Mat spk_tgt = vc.models.se->embed_utterance(ref_mel, pad);
  return vc.models.cm->convert(src_mel, spk_src, spk_tgt, pad);
}

int cmd_convert(const std::string& ckpt_path, const std::string& src_path, const std::string& ref_path,
                const std::string& out_path) {
  LoadedVc vc = load_vc_checkpoint(ckpt_path);
  echo_config(vc.cfg);
  const auto& fc = vc.cfg.features;
  Mat src_mel = signal::compute_mel(signal::load_wav(src_path, fc.sample_rate), fc).frames;
  Mat ref_mel = signal::compute_mel(signal::load_wav(ref_path, fc.sample_rate), fc).frames;
  Mat converted = convert_mel(vc, src_mel, ref_mel);

  signal::MelSpectrogram m;
  m.frames = converted;
  m.hop_length = fc.hop_length;
  signal::Waveform w = signal::mel_to_waveform(m, fc);
  const std::string out = resolve_out(out_path);
  ensure_parent(out);
  signal::save_wav(out, w);

  std::ofstream meldump(out + ".mel.csv");
  meldump << "# config_hash=" << vc.cfg.hash() << "\n";
  meldump.precision(17);
  for (int t = 0; t < converted.rows; ++t) {
    for (int j = 0; j < converted.cols; ++j) meldump << (j ? "," : "") << converted(t, j);
    meldump << "\n";
  }
  std::cout << "wrote " << out << " and " << out << ".mel.csv\n";
  return 0;
}

int cmd_evaluate(const std::string& ckpt_path, const std::string& pairs_path, const std::string& out_path,
                 bool force) {
  LoadedVc vc = load_vc_checkpoint(ckpt_path);
  echo_config(vc.cfg);
  if (!force) {
    const uint64_t own = features_hash(vc.cfg);
    const uint64_t asv_hash = std::stoull(vc.raw.meta.at("asv_features_hash"));
    if (own != asv_hash)
      throw std::runtime_error(
          "checkpoint mixes feature configurations (verification model vs conversion run); pass --force to override");
  }
  const auto& fc = vc.cfg.features;
  auto rows = read_csv(pairs_path, 3);

  eval::EvalReport report;
  report.variant = spk::variant_name(vc.cfg.training.variant);
  report.config_hash = vc.cfg.hash();
  report.checkpoint_hash = vc.raw.content_hash;

  for (const auto& row : rows) {
    eval::PairResult pr;
    pr.source_path = row[0];
    pr.target_speaker = row[1];
    pr.reference_path = row[2];
    pr.gender_tag = row.size() > 3 ? row[3] : "";

    signal::Waveform src = signal::load_wav(pr.source_path, fc.sample_rate);
    signal::Waveform ref = signal::load_wav(pr.reference_path, fc.sample_rate);
    Mat src_mel = signal::compute_mel(src, fc).frames;
    Mat ref_mel = signal::compute_mel(ref, fc).frames;
    Mat converted = convert_mel(vc, src_mel, ref_mel);

    signal::MelSpectrogram m;
    m.frames = converted;
    m.hop_length = fc.hop_length;
    signal::Waveform cw = signal::mel_to_waveform(m, fc);

    signal::McepSequence mc_conv = signal::compute_mcep(cw, fc);
    signal::McepSequence mc_ref = signal::compute_mcep(ref, fc);
    eval::AlignmentPath path = eval::dtw_align(mc_conv, mc_ref);
    pr.mcd = eval::dtw_mcd(mc_conv, mc_ref);
    pr.f0_mae_hz = eval::f0_mae(signal::extract_f0(cw, fc), signal::extract_f0(ref, fc), path);
    report.pairs.push_back(std::move(pr));
  }

  const std::string out = resolve_out(out_path);
  ensure_parent(out);
  std::ofstream jf(out);
  jf << report.to_json() << "\n";
  const auto dot = out.rfind('.');
  const std::string csv_path = (dot == std::string::npos ? out : out.substr(0, dot)) + ".csv";
  std::ofstream cf(csv_path);
  cf << report.to_csv();
  std::cout << "wrote " << out << " and " << csv_path << " (" << report.pairs.size() << " pairs, avg MCD "
            << report.avg_mcd() << " dB)\n";
  return 0;
}

int cmd_embed(const std::string& asv_path, const std::string& utts_path, const std::string& out_path) {
  LoadedAsv loaded = load_asv_checkpoint(asv_path);
  echo_config(loaded.cfg);
  const auto& fc = loaded.cfg.features;
  auto rows = read_csv(utts_path, 1);
  const std::string out = resolve_out(out_path);
  ensure_parent(out);
  std::ofstream f(out);
  f << "# config_hash=" << loaded.cfg.hash() << "\n";
  f << "id,group,converted";
  for (int j = 0; j < loaded.cfg.asv.embed_dim; ++j) f << ",e" << j;
  f << "\n";
  f.precision(17);
  for (const auto& row : rows) {
    const std::string& path = row[0];
    const std::string group = row.size() > 1 ? row[1] : "";
    const std::string converted = row.size() > 2 ? row[2] : "0";
    Mat mel = signal::compute_mel(signal::load_wav(path, fc.sample_rate), fc).frames;
    Mat dv = loaded.model->dvector(mel, std::log(fc.log_floor));
    f << path << "," << group << "," << converted;
    for (int j = 0; j < dv.cols; ++j) f << "," << dv(0, j);
    f << "\n";
  }
  std::cout << "wrote " << out << " (" << rows.size() << " rows)\n";
  return 0;
}

int cmd_project(const std::string& in_path, const std::string& method, const std::string& out_path, uint64_t seed) {
  std::ifstream f(in_path);
  if (!f) throw std::runtime_error("cannot open embedding table: " + in_path);
  std::string line, hash_line;
  std::vector<eval::EmbeddingRow> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      hash_line = line;
      continue;
    }
    if (line.rfind("id,", 0) == 0) continue;  // header
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cols;
    while (std::getline(ss, cell, ',')) cols.push_back(cell);
    if (cols.size() < 4) throw std::runtime_error("embedding row needs id,group,converted,e0...: " + line);
    eval::EmbeddingRow r;
    r.id = cols[0];
    r.group = cols[1];
    r.converted = cols[2] == "1";
    for (size_t j = 3; j < cols.size(); ++j) r.vec.push_back(std::stod(cols[j]));
    rows.push_back(std::move(r));
  }
  auto scatter = eval::project_2d(rows, method, seed);
  const std::string out = resolve_out(out_path);
  ensure_parent(out);
  std::ofstream of(out);
  if (!hash_line.empty()) of << hash_line << "\n";
  of << "id,group,converted,x,y\n";
  of.precision(17);
  for (const auto& s : scatter)
    of << s.id << "," << s.group << "," << (s.converted ? 1 : 0) << "," << s.x << "," << s.y << "\n";
  std::cout << "wrote " << out << " (" << scatter.size() << " points)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"zero-shot voice conversion with verification-based speaker embeddings"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth-corpus", "generate the synthetic toy-speaker corpus");
  std::string synth_out = "toy_corpus";
  int synth_speakers = 6, synth_utts = 20;
  uint64_t synth_seed = 1;
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--speakers", synth_speakers, "number of synthetic speakers");
  synth->add_option("--utts", synth_utts, "utterances per speaker");
  synth->add_option("--seed", synth_seed, "generator seed");

  auto* tasv = app.add_subcommand("train-asv", "pretrain the speaker-verification model");
  std::string tasv_config, tasv_corpus, tasv_out = "asv.ckpt", tasv_resume;
  int tasv_train_speakers = 0;
  tasv->add_option("config", tasv_config, "run configuration file")->required();
  tasv->add_option("--corpus", tasv_corpus, "corpus root directory")->required();
  tasv->add_option("--out", tasv_out, "checkpoint output path");
  tasv->add_option("--resume", tasv_resume, "checkpoint to resume from");
  tasv->add_option("--train-speakers", tasv_train_speakers, "train on a seeded split of this many speakers");

  auto* tvc = app.add_subcommand("train-vc", "jointly train the conversion model and speaker encoder");
  std::string tvc_config, tvc_variant, tvc_asv, tvc_corpus, tvc_out = "vc.ckpt";
  int tvc_train_speakers = 0;
  tvc->add_option("config", tvc_config, "run configuration file")->required();
  tvc->add_option("--variant", tvc_variant, "speaker embedding variant: d, g, dg or dgc");
  tvc->add_option("--asv", tvc_asv, "pretrained verification checkpoint (required for d, dg, dgc)");
  tvc->add_option("--corpus", tvc_corpus, "corpus root directory")->required();
  tvc->add_option("--out", tvc_out, "checkpoint output path");
  tvc->add_option("--train-speakers", tvc_train_speakers, "train on a seeded split of this many speakers");

  auto* cv = app.add_subcommand("convert", "convert one utterance to a target speaker");
  std::string cv_src, cv_ref, cv_ckpt, cv_out = "converted.wav";
  cv->add_option("--src", cv_src, "source wav")->required();
  cv->add_option("--ref", cv_ref, "target-speaker reference wav")->required();
  cv->add_option("--ckpt", cv_ckpt, "conversion checkpoint")->required();
  cv->add_option("--out", cv_out, "output wav path (a .mel.csv dump is written alongside)");

  auto* ev = app.add_subcommand("evaluate", "objective evaluation over a conversion-pair manifest");
  std::string ev_pairs, ev_ckpt, ev_out = "report.json";
  bool ev_force = false;
  ev->add_option("--pairs", ev_pairs, "csv manifest: source,target_speaker,reference[,gender_tag]")->required();
  ev->add_option("--ckpt", ev_ckpt, "conversion checkpoint")->required();
  ev->add_option("--out", ev_out, "report path (.json; a .csv sibling is written)");
  ev->add_flag("--force", ev_force, "evaluate even when feature configurations mix");

  auto* em = app.add_subcommand("embed", "export d-vectors for a list of utterances");
  std::string em_utts, em_asv, em_out = "embeddings.csv";
  em->add_option("--utts", em_utts, "csv manifest: path[,group[,converted]]")->required();
  em->add_option("--asv", em_asv, "verification checkpoint")->required();
  em->add_option("--out", em_out, "embedding table output");

  auto* pj = app.add_subcommand("project", "project an embedding table to 2-D");
  std::string pj_in, pj_method = "pca", pj_out = "scatter.csv";
  uint64_t pj_seed = 0;
  pj->add_option("--in", pj_in, "embedding table from the embed command")->required();
  pj->add_option("--method", pj_method, "pca or tsne")->check(CLI::IsMember({"pca", "tsne"}));
  pj->add_option("--out", pj_out, "scatter output csv");
  pj->add_option("--seed", pj_seed, "tsne seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth_corpus(synth_out, synth_speakers, synth_utts, synth_seed);
    if (tasv->parsed()) return cmd_train_asv(tasv_config, tasv_corpus, tasv_out, tasv_train_speakers, tasv_resume);
    if (tvc->parsed()) return cmd_train_vc(tvc_config, tvc_variant, tvc_asv, tvc_corpus, tvc_out, tvc_train_speakers);
    if (cv->parsed()) return cmd_convert(cv_ckpt, cv_src, cv_ref, cv_out);
    if (ev->parsed()) return cmd_evaluate(ev_ckpt, ev_pairs, ev_out, ev_force);
    if (em->parsed()) return cmd_embed(em_asv, em_utts, em_out);
    if (pj->parsed()) return cmd_project(pj_in, pj_method, pj_out, pj_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
