#include "higen/model.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "higen/checkpoint.hpp"
#include "higen/gradcheck.hpp"
#include "higen/objectives.hpp"
#include "oracles.hpp"

using namespace higen;

namespace {

// Tiny vocabulary: 7 specials + 3 "node" tokens + 2 words.
struct Fixture {
  Taxonomy taxonomy;
  Vocabulary vocab;
  ModelConfig cfg;

  Fixture() {
    taxonomy = Taxonomy::build(
        {{"A", "alpha beta", 0, {}}, {"B", "gamma", 0, {}}, {"A1", "delta", 0, {}}},
        {{kRootToken, "A"}, {kRootToken, "B"}, {"A", "A1"}});
    vocab = Vocabulary::build({{"x", "y"}, {"x"}}, taxonomy, 1);
    cfg.vocab_size = vocab.size();
    cfg.d_model = 16;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_ffn = 24;
    cfg.proj_dim = 6;
    cfg.max_len = 32;
  }

  Seq2SeqModel model(uint64_t seed = 3) const {
    return Seq2SeqModel(cfg, TokenInfo::from_vocab(vocab), seed);
  }
};

TEST(Encode, SingleTokenPoolsToItsState) {
  Fixture f;
  Seq2SeqModel m = f.model();
  EncoderOutput out = m.encode({f.vocab.id("x")});
  ASSERT_EQ(out.states.rows(), 1);
  EXPECT_TRUE(out.pooled.isApprox(out.states.row(0)));
}

TEST(Encode, AllPadRejected) {
  Fixture f;
  Seq2SeqModel m = f.model();
  EXPECT_THROW(m.encode({f.vocab.pad_id(), f.vocab.pad_id()}), Error);
  EXPECT_THROW(m.encode({}), Error);
}

TEST(Encode, TooLongRejected) {
  Fixture f;
  Seq2SeqModel m = f.model();
  std::vector<int> ids(f.cfg.max_len + 1, f.vocab.id("x"));
  EXPECT_THROW(m.encode(ids), SequenceTooLong);
}

TEST(Encode, PadPlacementInvariance) {
  Fixture f;
  Seq2SeqModel m = f.model();
  int x = f.vocab.id("x"), y = f.vocab.id("y"), pad = f.vocab.pad_id();
  EncoderOutput no_pad = m.encode({x, y});
  EncoderOutput tail_pad = m.encode({x, y, pad, pad});
  EncoderOutput mid_pad = m.encode({x, pad, y, pad});
  EXPECT_TRUE(no_pad.pooled.isApprox(tail_pad.pooled, 1e-12));
  EXPECT_TRUE(no_pad.pooled.isApprox(mid_pad.pooled, 1e-12));
  EXPECT_TRUE(mid_pad.states.row(2).isApprox(no_pad.states.row(1), 1e-12));
}

TEST(TeacherForced, DistributionsAreNormalized) {
  Fixture f;
  Seq2SeqModel m = f.model();
  std::vector<int> src = {f.vocab.id("x"), f.vocab.id("y")};
  std::vector<int> tgt = {f.vocab.bos_id(), f.vocab.root_id(), f.vocab.id("A"),
                          f.vocab.eos_id()};
  DistributionTrace trace = m.teacher_forced_forward(src, tgt);
  ASSERT_EQ(trace.probs.rows(), 3);
  for (long r = 0; r < trace.probs.rows(); ++r) {
    EXPECT_NEAR(trace.probs.row(r).sum(), 1.0, 1e-6);
    EXPECT_GE(trace.probs.row(r).minCoeff(), 0.0);
  }
}

TEST(TeacherForced, NodeFlagsMarkExactlyNodeTokens) {
  Fixture f;
  Seq2SeqModel m = f.model();
  std::vector<int> src = {f.vocab.id("x")};
  std::vector<int> tgt = {f.vocab.bos_id(), f.vocab.root_id(), f.vocab.id("A"),
                          f.vocab.sep_id(), f.vocab.id("A1"), f.vocab.eos_id()};
  DistributionTrace trace = m.teacher_forced_forward(src, tgt);
  // gold = [<root>, A, /, A1, </s>]
  ASSERT_EQ(trace.node_flag.size(), 5u);
  EXPECT_EQ(trace.node_flag[0], 0);
  EXPECT_EQ(trace.node_flag[1], 1);
  EXPECT_EQ(trace.node_flag[2], 0);
  EXPECT_EQ(trace.node_flag[3], 1);
  EXPECT_EQ(trace.node_flag[4], 0);
}

TEST(TeacherForced, RequiresBos) {
  Fixture f;
  Seq2SeqModel m = f.model();
  EXPECT_THROW(
      m.teacher_forced_forward({f.vocab.id("x")}, {f.vocab.root_id(), f.vocab.eos_id()}),
      Error);
}

TEST(TeacherForced, Causality) {
  Fixture f;
  Seq2SeqModel m = f.model();
  std::vector<int> src = {f.vocab.id("x"), f.vocab.id("y")};
  std::vector<int> tgt1 = {f.vocab.bos_id(), f.vocab.root_id(), f.vocab.id("A"),
                           f.vocab.sep_id(), f.vocab.eos_id()};
  std::vector<int> tgt2 = tgt1;
  tgt2[3] = f.vocab.id("B");  // change gold position 2
  DistributionTrace a = m.teacher_forced_forward(src, tgt1);
  DistributionTrace b = m.teacher_forced_forward(src, tgt2);
  // Distributions at gold positions <= 2 are unchanged.
  for (int r = 0; r <= 2; ++r)
    EXPECT_TRUE(a.probs.row(r).isApprox(b.probs.row(r), 1e-12)) << "row " << r;
  EXPECT_FALSE(a.probs.row(3).isApprox(b.probs.row(3), 1e-6));
}

TEST(Generate, DeterministicAndGreedyConsistent) {
  Fixture f;
  Seq2SeqModel m = f.model();
  std::vector<int> src = {f.vocab.id("x"), f.vocab.id("y")};
  std::vector<int> out1 = m.generate(src, 8);
  std::vector<int> out2 = m.generate(src, 8);
  EXPECT_EQ(out1, out2);
  ASSERT_FALSE(out1.empty());

  // Teacher forcing over the generated sequence reproduces each greedy step.
  std::vector<int> tgt = {f.vocab.bos_id()};
  for (int id : out1) tgt.push_back(id);
  DistributionTrace trace = m.teacher_forced_forward(src, tgt);
  for (size_t k = 0; k < out1.size(); ++k) {
    long argmax = 0;
    trace.probs.row(k).maxCoeff(&argmax);
    EXPECT_EQ(static_cast<int>(argmax), out1[k]) << "step " << k;
  }
}

TEST(Generate, ConstrainedStaysInAllowedSet) {
  Fixture f;
  Seq2SeqModel m = f.model();
  std::vector<int> allowed = f.vocab.allowed_token_ids(f.taxonomy);
  std::set<int> allowed_set(allowed.begin(), allowed.end());
  allowed_set.insert(f.vocab.eos_id());
  std::vector<int> out =
      m.generate({f.vocab.id("x")}, 8, /*constrained=*/true, allowed);
  for (int id : out) EXPECT_TRUE(allowed_set.count(id)) << "token " << id;
}

TEST(Generate, LogProbMatchesStepwiseProduct) {
  Fixture f;
  Seq2SeqModel m = f.model();
  std::vector<int> src = {f.vocab.id("y")};
  std::vector<int> tgt = {f.vocab.bos_id(), f.vocab.root_id(), f.vocab.id("B"),
                          f.vocab.eos_id()};
  DistributionTrace trace = m.teacher_forced_forward(src, tgt);
  double product = 1.0;
  for (long r = 0; r < trace.probs.rows(); ++r) product *= trace.probs(r, trace.gold[r]);
  EXPECT_NEAR(std::exp(m.sequence_log_prob(src, tgt)), product, 1e-12);
}

TEST(Projections, UnitNormAndDisjointParameters) {
  Fixture f;
  Seq2SeqModel m = f.model();
  nn::RowVector h = nn::RowVector::LinSpaced(f.cfg.d_model, -1.0, 1.0);
  nn::RowVector et = m.project_text(h);
  nn::RowVector el = m.project_label(h);
  EXPECT_NEAR(et.norm(), 1.0, 1e-6);
  EXPECT_NEAR(el.norm(), 1.0, 1e-6);

  // Mutating FC_t must not change FC_l's output.
  m.fc_t().l1.b.w.array() += 0.5;
  nn::RowVector el2 = m.project_label(h);
  EXPECT_TRUE(el.isApprox(el2, 1e-12));
  nn::RowVector et2 = m.project_text(h);
  EXPECT_FALSE(et.isApprox(et2, 1e-6));

  // Zero input still produces a unit-norm output through the bias path.
  nn::RowVector zero = nn::RowVector::Zero(f.cfg.d_model);
  EXPECT_NEAR(m.project_text(zero).norm(), 1.0, 1e-6);
}

// ---------------------------------------------------------------------------
// Full-model finite differences: the analytic backward pass for the combined
// LM + semantic objective must match central differences over every
// parameter. This exercises embeddings, attention, layer norms, feed-forward,
// pooling, both projection heads and the weight-tied LM head.

TEST(Backward, FullModelFiniteDifferences) {
  Fixture f;
  Seq2SeqModel m = f.model(11);

  std::vector<std::vector<int>> srcs = {
      {f.vocab.id("x"), f.vocab.id("y"), f.vocab.id("x")},
      {f.vocab.id("y"), f.vocab.id("y")}};
  std::vector<std::vector<int>> tgts = {
      {f.vocab.bos_id(), f.vocab.root_id(), f.vocab.id("A"), f.vocab.eos_id()},
      {f.vocab.bos_id(), f.vocab.root_id(), f.vocab.id("B"), f.vocab.eos_id()}};
  std::vector<std::vector<int>> names = {f.vocab.encode_text("alpha beta"),
                                         f.vocab.encode_text("gamma")};
  std::vector<std::vector<int>> classes = {{0}, {1}};
  const std::vector<double> alphas{0.07};
  const double lambda_sem = 0.5;

  auto total_loss = [&]() {
    double lm_total = 0;
    nn::Matrix e_t(2, f.cfg.proj_dim), e_l(2, f.cfg.proj_dim);
    for (int i = 0; i < 2; ++i) {
      EncodeCache enc;
      m.encode_cached(srcs[i], nullptr, enc);
      DecodeCache dec;
      DistributionTrace trace = m.teacher_forced_cached(enc, tgts[i], nullptr, dec);
      lm_total += lm_loss(trace).value / 2;
      e_t.row(i) = m.project_text(enc.pooled);
      EncodeCache name_enc;
      m.encode_cached(names[i], nullptr, name_enc);
      e_l.row(i) = m.project_label(name_enc.pooled);
    }
    SemanticResult sem = semantic_loss(e_t, {e_l}, classes, alphas);
    return lm_total + lambda_sem * sem.value;
  };

  // Analytic gradients through the full training path.
  m.zero_grad();
  {
    std::vector<EncodeCache> enc(2);
    std::vector<DecodeCache> dec(2);
    std::vector<DistributionTrace> traces(2);
    std::vector<EncodeCache> name_enc(2);
    std::vector<nn::Projection::Cache> cache_t(2), cache_l(2);
    nn::Matrix e_t(2, f.cfg.proj_dim), e_l(2, f.cfg.proj_dim);
    for (int i = 0; i < 2; ++i) {
      m.encode_cached(srcs[i], nullptr, enc[i]);
      traces[i] = m.teacher_forced_cached(enc[i], tgts[i], nullptr, dec[i]);
      e_t.row(i) = m.project_text(enc[i].pooled, cache_t[i]);
      m.encode_cached(names[i], nullptr, name_enc[i]);
      e_l.row(i) = m.project_label(name_enc[i].pooled, cache_l[i]);
    }
    SemanticResult sem = semantic_loss(e_t, {e_l}, classes, alphas);
    ASSERT_GT(sem.value, 0.0);  // hinge must be active for a meaningful check
    for (int i = 0; i < 2; ++i) {
      nn::RowVector dpooled =
          m.backward_project_text(lambda_sem * sem.d_text.row(i), cache_t[i]);
      nn::RowVector dpooled_name =
          m.backward_project_label(lambda_sem * sem.d_label[0].row(i), cache_l[i]);
      m.backward_encoder_only(name_enc[i], dpooled_name);
      nn::Matrix dlogits = lm_loss(traces[i]).dlogits / 2;
      m.backward_example(enc[i], dec[i], dlogits, &dpooled);
    }
  }

  double worst = 0;
  for (auto* t : m.params()) {
    worst = std::max(worst, finite_difference_check(total_loss, t->w, t->g, 1e-5,
                                                    t->name));
  }
  EXPECT_LT(worst, 1e-4) << "worst relative FD mismatch " << worst;
}

TEST(Backward, AllParametersReceiveGradientFromLmLoss) {
  Fixture f;
  Seq2SeqModel m = f.model(13);
  m.zero_grad();
  // Touch every vocabulary row so the embedding gradient has no dead rows.
  std::vector<int> src;
  for (int id = 0; id < f.vocab.size(); ++id)
    if (id != f.vocab.pad_id()) src.push_back(id);
  std::vector<int> tgt = {f.vocab.bos_id(), f.vocab.root_id(), f.vocab.id("A"),
                          f.vocab.sep_id(), f.vocab.id("A1"), f.vocab.eos_id()};
  EncodeCache enc;
  m.encode_cached(src, nullptr, enc);
  DecodeCache dec;
  DistributionTrace trace = m.teacher_forced_cached(enc, tgt, nullptr, dec);
  // Include the projection heads via a semantic-style pull on the pooled state.
  nn::Projection::Cache ct, cl;
  nn::RowVector et = m.project_text(enc.pooled, ct);
  nn::RowVector el = m.project_label(enc.pooled, cl);
  nn::RowVector det = nn::RowVector::Ones(f.cfg.proj_dim);
  nn::RowVector dpool = m.backward_project_text(det, ct);
  dpool += m.backward_project_label(det, cl);
  m.backward_example(enc, dec, lm_loss(trace).dlogits, &dpool);
  for (auto* t : m.params()) {
    EXPECT_GT(t->g.cwiseAbs().maxCoeff(), 0.0) << "dead parameter tensor " << t->name;
  }
}

// ---------------------------------------------------------------------------

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  Fixture f;
  Seq2SeqModel m = f.model(17);
  namespace fs = std::filesystem;
  std::string p1 = (fs::temp_directory_path() / "higen_ck1.bin").string();
  std::string p2 = (fs::temp_directory_path() / "higen_ck2.bin").string();
  save_checkpoint(m, p1);
  Seq2SeqModel loaded = load_checkpoint(p1, TokenInfo::from_vocab(f.vocab));
  save_checkpoint(loaded, p2);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), {});
  std::string s2((std::istreambuf_iterator<char>(f2)), {});
  EXPECT_FALSE(s1.empty());
  EXPECT_EQ(s1, s2);
  EXPECT_EQ(loaded.config(), m.config());
  fs::remove(p1);
  fs::remove(p2);
}

TEST(Checkpoint, TruncatedFileIsCorrupt) {
  Fixture f;
  Seq2SeqModel m = f.model();
  namespace fs = std::filesystem;
  std::string path = (fs::temp_directory_path() / "higen_ck_trunc.bin").string();
  save_checkpoint(m, path);
  auto size = fs::file_size(path);
  fs::resize_file(path, size / 2);
  EXPECT_THROW(load_checkpoint(path, TokenInfo::from_vocab(f.vocab)), CorruptFile);
  fs::remove(path);
}

TEST(Checkpoint, FlippedPayloadByteIsCorrupt) {
  Fixture f;
  Seq2SeqModel m = f.model();
  namespace fs = std::filesystem;
  std::string path = (fs::temp_directory_path() / "higen_ck_flip.bin").string();
  save_checkpoint(m, path);
  {
    std::fstream io(path, std::ios::in | std::ios::out | std::ios::binary);
    io.seekp(100);
    char b = 0x5a;
    io.write(&b, 1);
  }
  EXPECT_THROW(load_checkpoint(path, TokenInfo::from_vocab(f.vocab)), CorruptFile);
  fs::remove(path);
}

TEST(Checkpoint, BumpedVersionIsMismatch) {
  Fixture f;
  Seq2SeqModel m = f.model();
  namespace fs = std::filesystem;
  std::string path = (fs::temp_directory_path() / "higen_ck_ver.bin").string();
  save_checkpoint(m, path);
  {
    std::fstream io(path, std::ios::in | std::ios::out | std::ios::binary);
    io.seekp(4);  // version field follows the 4 magic bytes
    uint32_t v = 99;
    io.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  EXPECT_THROW(load_checkpoint(path, TokenInfo::from_vocab(f.vocab)), VersionMismatch);
  fs::remove(path);
}

TEST(Checkpoint, BadMagicIsCorrupt) {
  Fixture f;
  namespace fs = std::filesystem;
  std::string path = (fs::temp_directory_path() / "higen_ck_magic.bin").string();
  std::ofstream out(path, std::ios::binary);
  out << "NOPE this is not a checkpoint";
  out.close();
  EXPECT_THROW(load_checkpoint(path, TokenInfo::from_vocab(Fixture().vocab)),
               CorruptFile);
  fs::remove(path);
}

}  // namespace
