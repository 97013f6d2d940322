#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "spe/errors.hpp"
#include "spe/harness/config.hpp"
#include "spe/harness/csv.hpp"
#include "spe/harness/experiments.hpp"
#include "spe/random.hpp"

namespace spe::harness {
namespace {

Config make(std::initializer_list<std::string> assignments) {
  Config c;
  c.apply_overrides(assignments);
  return c;
}

std::filesystem::path temp_file(const std::string& name, const std::string& contents) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream(path, std::ios::binary) << contents;
  return path;
}

TEST(FormatNumber, NineSignificantDigits) {
  EXPECT_EQ(format_number(1.0), "1.00000000e+00");
  EXPECT_EQ(format_number(-0.000123456789123), "-1.23456789e-04");
  EXPECT_EQ(format_number(Index{42}), "42");
  EXPECT_EQ(format_number(std::numeric_limits<double>::quiet_NaN()), "nan");
  EXPECT_EQ(format_number(-std::numeric_limits<double>::infinity()), "-inf");
  EXPECT_TRUE(std::isnan(parse_number("nan")));
}

TEST(FormatNumber, RoundTripWithinLastDigit) {
  RandomStream s(1);
  for (int i = 0; i < 10000; ++i) {
    const double x = s.normal() * std::pow(10.0, s.uniform(-30.0, 30.0));
    const double y = parse_number(format_number(x));
    const double unit = std::pow(10.0, std::floor(std::log10(std::abs(y))) - 8);
    EXPECT_LE(std::abs(x - y), unit) << format_number(x);
    EXPECT_EQ(format_number(y), format_number(x));
  }
}

TEST(ParseNumber, Errors) {
  EXPECT_THROW(parse_number("", 3), ParseError);
  EXPECT_THROW(parse_number("1.0x", 3), ParseError);
  try {
    parse_number("abc", 7);
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 7);
    EXPECT_NE(std::string(e.what()).find("line 7"), std::string::npos);
  }
}

TEST(CsvTable, RoundTrip) {
  CsvTable t;
  t.comments = {"spe test", "a = 1"};
  t.columns = {"x", "y"};
  t.add_row({"1", format_number(0.5)});
  t.add_row({"2", format_number(-3.25e-7)});
  t.trailer = {"slope = 2"};
  const std::string text = t.serialize();
  const CsvTable u = CsvTable::parse(text);
  EXPECT_EQ(u.comments, t.comments);
  EXPECT_EQ(u.columns, t.columns);
  EXPECT_EQ(u.rows, t.rows);
  EXPECT_EQ(u.trailer, t.trailer);
  EXPECT_EQ(u.serialize(), text);
  EXPECT_DOUBLE_EQ(u.number(1, "y"), -3.25e-7);
  EXPECT_THROW(u.column("z"), ParseError);
  EXPECT_THROW(t.add_row({"1"}), ShapeError);
}

TEST(CsvTable, MalformedInput) {
  EXPECT_THROW(CsvTable::parse("# only comments\n"), ParseError);
  try {
    CsvTable::parse("a,b\n1,2\n3\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3);
  }
}

TEST(CsvMatrix, RoundTrip) {
  RandomStream s(2);
  CsvMatrix m{{"variant = sine"}, s.normal_matrix(5, 7)};
  const std::string text = m.serialize();
  EXPECT_EQ(text.rfind("# rows=5\n# cols=7\n", 0), 0u);
  const CsvMatrix back = CsvMatrix::parse(text);
  EXPECT_EQ(back.comments, m.comments);
  ASSERT_EQ(back.values.rows(), 5);
  ASSERT_EQ(back.values.cols(), 7);
  EXPECT_LE(((back.values - m.values).array() / m.values.array()).abs().maxCoeff(), 1e-8);
  EXPECT_EQ(back.serialize(), text);
}

TEST(CsvMatrix, ShapeIsChecked) {
  EXPECT_THROW(CsvMatrix::parse("# rows=2\n# cols=2\n1,2\n"), ParseError);
  EXPECT_THROW(CsvMatrix::parse("# rows=1\n# cols=2\n1,2,3\n"), ParseError);
}

TEST(Config, ParseAndTypedAccess) {
  const Config c = Config::parse("# comment\nvariant = conv\nP = 4  # trailing\nsweep = 1, 2, 4\ncausal = false\n\n");
  EXPECT_EQ(c.get_string("variant", "sine"), "conv");
  EXPECT_EQ(c.get_index("P", 8), 4);
  EXPECT_EQ(c.get_index_list("sweep", {}), (std::vector<Index>{1, 2, 4}));
  EXPECT_FALSE(c.get_bool("causal", true));
  EXPECT_EQ(c.get_index("N", 17), 17);
  const auto lines = c.effective_lines();
  EXPECT_NE(std::find(lines.begin(), lines.end(), "N = 17"), lines.end());
}

TEST(Config, ErrorsNameTheLine) {
  try {
    Config::parse("D = 4\nbogus = 1\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2);
  }
  try {
    Config::parse("D = 4\nno equals sign\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2);
  }
  EXPECT_THROW(make({"D=x"}).get_index("D", 1), ParseError);
  EXPECT_THROW(make({"causal=maybe"}).get_bool("causal", true), ParameterError);
  EXPECT_THROW(Config().apply_overrides({"D"}), ParseError);
}

TEST(Config, OverridesWinAndRuntimeKeysAreNotEchoed) {
  const auto path = temp_file("spe_cfg_test.txt", "D = 2\nseed = 5\n");
  Config c = Config::load(path);
  c.apply_overrides({"D=3", "out=x.csv", "jobs=4"});
  EXPECT_EQ(c.get_index("D", 1), 3);
  EXPECT_EQ(c.get_u64("seed", 0), 5u);
  c.get_string("out", "");
  c.get_index("jobs", 1);
  for (const auto& line : c.effective_lines()) {
    EXPECT_NE(line.rfind("out", 0), 0u);
    EXPECT_NE(line.rfind("jobs", 0), 0u);
  }
  EXPECT_THROW(Config::load("/nonexistent/spe.cfg"), IoError);
}

TEST(ResolveExperiment, VariantKeysAndDefaults) {
  ExperimentDefaults d;
  const ExperimentConfig e = resolve_experiment(make({"R_train=128"}), d);
  EXPECT_EQ(e.r_test, 128);
  EXPECT_EQ(e.num_queries, e.num_keys);
  EXPECT_FALSE(e.gates.has_value());
  EXPECT_THROW(resolve_experiment(make({"P=4"}), d), ParameterError);
  EXPECT_THROW(resolve_experiment(make({"variant=conv", "K=2"}), d), ParameterError);
  EXPECT_THROW(resolve_experiment(make({"variant=conv", "M=3", "N=4"}), d), ParameterError);
  EXPECT_THROW(resolve_experiment(make({"D=2", "gates=0.1,0.2,0.3"}), d), ParameterError);
  const ExperimentConfig g = resolve_experiment(make({"D=3", "gates=0.25"}), d);
  ASSERT_TRUE(g.gates.has_value());
  EXPECT_EQ(g.gates->size(), 3);
  const ExperimentConfig t = resolve_experiment(make({"R_train=64", "R_test=256"}), d);
  EXPECT_EQ(t.r_train, 64);
  EXPECT_EQ(t.r_test, 256);
}

TEST(ResolveParams, ExplicitAndSeeded) {
  const Config c = make({"D=2", "K=1", "freqs=0.1,0.2", "phases=0,0.5", "gains=1,2"});
  const ExperimentConfig e = resolve_experiment(c, {});
  const SineSpeParams p = resolve_sine_params(c, e);
  EXPECT_DOUBLE_EQ(p.freqs(1, 0), 0.2);
  EXPECT_DOUBLE_EQ(p.gains(1, 0), 2.0);
  EXPECT_THROW(resolve_sine_params(make({"D=2", "K=1", "freqs=0.1"}), e), ParameterError);
  const SineSpeParams r = random_sine_params(3, 2, 7);
  EXPECT_EQ(r.freqs, random_sine_params(3, 2, 7).freqs);
  EXPECT_GE(r.freqs.minCoeff(), 0.0);
  EXPECT_LE(r.freqs.maxCoeff(), 0.5);
  EXPECT_NO_THROW(r.validate());
}

TEST(Helpers, QuantilesSlopesAndPaths) {
  EXPECT_DOUBLE_EQ(median({3, 1, 2}), 2.0);
  EXPECT_DOUBLE_EQ(median({4, 1, 2, 3}), 2.5);
  EXPECT_DOUBLE_EQ(quantile({0, 10}, 0.25), 2.5);
  EXPECT_THROW(median({}), ParameterError);
  EXPECT_NEAR(loglog_slope({1, 10, 100}, {1, 0.1, 0.01}), -1.0, 1e-12);
  EXPECT_TRUE(std::isnan(loglog_slope({1, 2}, {1, 0})));
  EXPECT_EQ(derived_path("out/x.csv", "trace"), "out/x_trace.csv");
  EXPECT_EQ(derived_path("a.b/x", "trace"), "a.b/x_trace");
  EXPECT_EQ(derived_path("", "trace"), "");
  Matrix a(3, 3);
  a << 1, 2, 3, 4, 5, 6, 7, 8, 9;
  const Vector d = diagonal_means(a, {-1, 0, 2});
  EXPECT_DOUBLE_EQ(d[0], 4.0);
  EXPECT_DOUBLE_EQ(d[1], 5.0);
  EXPECT_DOUBLE_EQ(d[2], 7.0);
  EXPECT_THROW(diagonal_means(a, {3}), RangeError);
}

TEST(KernelTargetFile, ParseAndErrors) {
  const KernelTarget t = parse_kernel_target("# target\noffset,value,weight\n-1, 0.5\n0, 1.0, 2\n1, 0.5\n");
  EXPECT_EQ(t.offsets, (std::vector<Index>{-1, 0, 1}));
  EXPECT_EQ(t.weights, (std::vector<double>{1.0, 2.0, 1.0}));
  EXPECT_EQ(parse_kernel_target(serialize_kernel_target(t)).values, t.values);
  auto line_of = [](const std::string& text) {
    try {
      parse_kernel_target(text);
    } catch (const ParseError& e) {
      return e.line();
    }
    return -1L;
  };
  EXPECT_EQ(line_of("0, 1\n1, x\n"), 2);
  EXPECT_EQ(line_of("0, 1\n# c\n1\n"), 3);
  EXPECT_EQ(line_of("0, 1\n0, 2\n"), 2);
  EXPECT_EQ(line_of("0.5, 1\n"), 1);
  EXPECT_EQ(line_of("0, 1, -1\n"), 1);
  EXPECT_THROW(parse_kernel_target("# nothing\n"), ParseError);
}

TEST(Commands, ConvergenceFlagsZeroKernel) {
  const Config c = make({"N=16", "sweep=64,256", "seeds=3", "gains=0,0", "freqs=0.1,0.2", "phases=0,0"});
  const std::string out = run_convergence(c).files.at(0).contents;
  EXPECT_NE(out.find("absolute_frobenius"), std::string::npos);
  const CsvTable t = CsvTable::parse(out);
  EXPECT_EQ(t.number(0, "median_error"), 0.0);
}

TEST(Commands, ConvergenceIsIndependentOfJobs) {
  const Config a = make({"N=24", "sweep=64,128,256", "seeds=4"});
  const Config b = make({"N=24", "sweep=64,128,256", "seeds=4", "jobs=3"});
  EXPECT_EQ(run_convergence(a).files[0].contents, run_convergence(b).files[0].contents);
}

TEST(Commands, CrosstermNeedsTwoDimensions) {
  EXPECT_THROW(run_crossterm(make({"D=1"})), ParameterError);
}

TEST(Commands, AttentionDumpZeroContentIsAllOnes) {
  const auto files = run_attention_dump(make({"N=12", "D=2", "content=zeros", "gates=1", "out=a.csv"})).files;
  ASSERT_EQ(files.size(), 3u);
  EXPECT_EQ(files[0].path, "a_unnormalized.csv");
  const Matrix a = CsvMatrix::parse(files[0].contents).values;
  for (Index m = 0; m < 12; ++m) {
    for (Index n = 0; n < 12; ++n) EXPECT_EQ(a(m, n), n <= m ? 1.0 : 0.0);
  }
  const Matrix norm = CsvMatrix::parse(files[1].contents).values;
  EXPECT_LE((norm.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-7);
  EXPECT_NE(files[0].contents.find("gates_effective"), std::string::npos);
}

TEST(Commands, AttentionDumpConvScoresVanishBeyondFilter) {
  const auto files =
      run_attention_dump(make({"variant=conv", "P=4", "N=20", "D=3", "mode=expected", "causal=false", "out=c.csv"}))
          .files;
  const Matrix logits = CsvMatrix::parse(files[2].contents).values;
  for (Index m = 0; m < 20; ++m) {
    for (Index n = 0; n < 20; ++n) {
      if (std::abs(m - n) >= 4) {
        EXPECT_EQ(logits(m, n), 0.0);
      }
    }
  }
  EXPECT_GT(logits.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Commands, AttentionDumpSineBandingHasPeriod64) {
  const Index n = 256;
  std::string content = "# rows=256\n# cols=1\n";
  for (Index i = 0; i < n; ++i) content += "1\n";
  const auto path = temp_file("spe_ones.csv", content);
  const auto files = run_attention_dump(make({"N=256", "D=1", "K=1", "freqs=0.015625", "phases=0", "gains=1",
                                              "mode=expected", "content=file", "content_file=" + path.string(),
                                              "out=s.csv"}))
                         .files;
  const Matrix a = CsvMatrix::parse(files[0].contents).values;
  for (Index m : {200, 230, 255}) {
    // Profile over the causal part of the row, by offset.
    Vector profile(m + 1);
    for (Index t = 0; t <= m; ++t) profile[t] = a(m, m - t);
    Index best_lag = 0;
    double best = -1e300;
    for (Index lag = 8; lag <= 100; ++lag) {
      // Pearson correlation of the profile with its shifted copy.
      Vector x = profile.head(m + 1 - lag);
      Vector y = profile.tail(m + 1 - lag);
      x.array() -= x.mean();
      y.array() -= y.mean();
      const double r = x.dot(y) / (x.norm() * y.norm());
      if (r > best) {
        best = r;
        best_lag = lag;
      }
    }
    EXPECT_EQ(best_lag, 64) << "row " << m;
  }
}

TEST(Commands, AttentionDumpGuard) {
  EXPECT_THROW(run_attention_dump(make({"N=5000", "out=x.csv"})), ParameterError);
}

TEST(Commands, FitTargetsAndErrors) {
  const auto zero = run_fit(make({"variant=conv", "P=4", "target_kind=zero", "restarts=2", "out=f.txt"})).files;
  ASSERT_EQ(zero.size(), 2u);
  EXPECT_EQ(zero[1].path, "f_trace.txt");
  const std::string& text = zero[0].contents;
  const std::size_t at = text.find("final_loss = ");
  ASSERT_NE(at, std::string::npos);
  EXPECT_LT(std::stod(text.substr(at + 13)), 1e-6);
  EXPECT_EQ(CsvTable::parse(zero[1].contents).columns, (std::vector<std::string>{"iteration", "loss"}));

  const auto bad = temp_file("spe_bad_target.txt", "0, 1\n1, 0.5\nnot a row\n");
  try {
    run_fit(make({"target=" + bad.string()}));
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
  EXPECT_THROW(run_fit(make({"target_kind=file"})), ParameterError);
  EXPECT_THROW(run_fit(make({"target=/nonexistent/target.txt"})), IoError);
}

TEST(Commands, ProbeRangeChecks) {
  EXPECT_THROW(run_probe(make({"N=64", "train_length=64"})), RangeError);
  EXPECT_THROW(run_probe(make({"N=96", "train_length=64", "windows=40"})), RangeError);
}

TEST(Commands, UnknownCommand) {
  EXPECT_THROW(run_command("nope", Config{}), ParameterError);
  EXPECT_EQ(command_names().size(), 7u);
}

}  // namespace
}  // namespace spe::harness
