#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "floodcnn/error.hpp"
#include "floodcnn/nnet.hpp"
#include "oracles.hpp"

using namespace floodcnn;

namespace {

RowMatrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    RowMatrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

NetSpec tiny_spec(bool batchnorm = false) {
    NetSpec s;
    s.input_len = 6;
    s.conv_filters = {2, 3};
    s.kernel_size = 3;
    s.dense_units = {4, 3};
    s.output_dim = 2;
    s.use_batchnorm = batchnorm;
    return s;
}

// Random nonzero parameters, including biases and batchnorm affine terms.
void randomize(CnnModel& m, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-0.8, 0.8);
    for (auto& p : m.params())
        for (Eigen::Index i = 0; i < p.value->size(); ++i)
            p.value->data()[i] = p.batchnorm && p.name.find("gamma") != std::string::npos ? 1.0 + 0.5 * u(rng) : u(rng);
}

std::vector<double> flat_params(CnnModel& m) {
    std::vector<double> out;
    for (auto& p : m.params()) out.insert(out.end(), p.value->data(), p.value->data() + p.value->size());
    return out;
}

double relu(double x) { return x > 0.0 ? x : 0.0; }

}  // namespace

TEST_SUITE("nnet") {

TEST_CASE("initialisation is seeded and shaped by the NetSpec") {
    NetSpec s = tiny_spec();
    s.output_dim = 9;
    CnnModel a = init_model(s, 4), b = init_model(s, 4), c = init_model(s, 5);
    CHECK(flat_params(a) == flat_params(b));
    CHECK(flat_params(a) != flat_params(c));
    const auto params = a.params();
    CHECK(params.back().name == "output.bias");
    CHECK(params[params.size() - 2].value->rows() == 3);
    CHECK(params[params.size() - 2].value->cols() == 9);
    for (const auto& p : params)
        if (p.name.find("bias") != std::string::npos) CHECK(p.value->isZero());
    CHECK(a.forward(RowMatrix::Zero(3, 6), nn::Mode::infer).isZero());
}

TEST_CASE("the default network has the expected parameter count") {
    NetSpec s;
    s.output_dim = 100;
    CnnModel m = init_model(s, 1);
    // conv 1->32 (k3), conv 32->128 (k3), dense 28*128->32->256->512->100
    const std::size_t expected = (3 * 1 * 32 + 32) + (3 * 32 * 128 + 128) + (28 * 128 * 32 + 32) + (32 * 256 + 256) +
                                 (256 * 512 + 512) + (512 * 100 + 100);
    CHECK(m.parameter_count() == expected);
}

TEST_CASE("forward output is rows x C and zero parameters give zero output") {
    CnnModel m = init_model(tiny_spec(), 2);
    CHECK(m.forward(random_matrix(1, 6, 1), nn::Mode::infer).rows() == 1);
    CHECK(m.forward(random_matrix(1, 6, 1), nn::Mode::infer).cols() == 2);
    for (auto& p : m.params()) p.value->setZero();
    CHECK(m.forward(random_matrix(5, 6, 2), nn::Mode::infer).isZero());
    CHECK_THROWS_AS(m.forward(random_matrix(1, 5, 2), nn::Mode::infer), ShapeError);
}

TEST_CASE("a tiny network matches a hand-written forward trace") {
    NetSpec s;
    s.input_len = 4;
    s.conv_filters = {2};
    s.kernel_size = 3;
    s.dense_units = {3};
    s.output_dim = 2;
    CnnModel m(s);
    randomize(m, 77);
    auto p = m.params();
    const RowMatrix& cw = *p[0].value;  // (3 taps * 1 channel) x 2 filters
    const RowMatrix& cb = *p[1].value;
    const RowMatrix& dw = *p[2].value;  // (4 positions * 2 channels) x 3
    const RowMatrix& db = *p[3].value;
    const RowMatrix& ow = *p[4].value;  // 3 x 2
    const RowMatrix& ob = *p[5].value;
    const double x[4] = {0.3, -1.2, 0.8, 0.05};

    double conv[4][2];
    for (int l = 0; l < 4; ++l)
        for (int f = 0; f < 2; ++f) {
            double a = cb(0, f);
            for (int t = 0; t < 3; ++t) {
                const int pos = l + t - 1;
                if (pos >= 0 && pos < 4) a += cw(t, f) * x[pos];
            }
            conv[l][f] = relu(a);
        }
    double hidden[3];
    for (int j = 0; j < 3; ++j) {
        double a = db(0, j);
        for (int l = 0; l < 4; ++l)
            for (int f = 0; f < 2; ++f) a += dw(l * 2 + f, j) * conv[l][f];
        hidden[j] = relu(a);
    }
    RowMatrix in(1, 4);
    in << x[0], x[1], x[2], x[3];
    const RowMatrix out = m.forward(in, nn::Mode::infer);
    for (int k = 0; k < 2; ++k) {
        double a = ob(0, k);
        for (int j = 0; j < 3; ++j) a += ow(j, k) * hidden[j];
        CHECK(out(0, k) == doctest::Approx(a).epsilon(1e-14));
    }
}

TEST_CASE("mse loss") {
    const RowMatrix a = random_matrix(7, 5, 3);
    CHECK(loss_mse(a, a) == 0.0);
    CHECK(loss_mse(a.array() + 2.0, a) == doctest::Approx(4.0).epsilon(1e-14));
    const RowMatrix b = random_matrix(7, 5, 4);
    long double s = 0.0L;
    for (Eigen::Index i = 0; i < a.size(); ++i) s += (a.data()[i] - b.data()[i]) * (a.data()[i] - b.data()[i]);
    CHECK(std::abs(loss_mse(a, b) - static_cast<double>(s / a.size())) <= 1e-12);
    CHECK_THROWS_AS(loss_mse(a, random_matrix(7, 4, 1)), ShapeError);
}

TEST_CASE("analytic gradients match finite differences over 5 seeds") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        CnnModel plain(tiny_spec(false));
        randomize(plain, seed);
        const RowMatrix x = random_matrix(5, 6, 100 + seed), y = random_matrix(5, 2, 200 + seed);
        const auto g = oracle::check_gradients(plain, x, y);
        CHECK(g.worst_plain <= 1e-4);

        CnnModel bn(tiny_spec(true));
        randomize(bn, seed);
        const auto gb = oracle::check_gradients(bn, x, y);
        CHECK(gb.worst_plain <= 1e-4);
        CHECK(gb.worst_batchnorm <= 1e-3);
    }
}

TEST_CASE("gradients vanish at a zero-loss point") {
    CnnModel m(tiny_spec());
    randomize(m, 9);
    const RowMatrix x = random_matrix(4, 6, 1);
    const RowMatrix y = m.forward(x, nn::Mode::train);
    m.zero_grad();
    CHECK(compute_gradients(m, x, y, nullptr) == 0.0);
    for (auto& p : m.params()) CHECK(p.grad->isZero());
}

TEST_CASE("output bias gradient is twice the mean residual") {
    NetSpec s = tiny_spec();
    s.output_dim = 1;
    CnnModel m(s);
    randomize(m, 10);
    const RowMatrix x = random_matrix(9, 6, 2), y = random_matrix(9, 1, 3);
    const RowMatrix pred = m.forward(x, nn::Mode::train);
    m.zero_grad();
    compute_gradients(m, x, y, nullptr);
    const double mean_residual = (pred - y).mean();
    CHECK(std::abs((*m.params().back().grad)(0, 0) - 2.0 * mean_residual) <= 1e-10);
}

TEST_CASE("im2col convolution matches the direct reference") {
    nn::Conv1d conv(11, 3, 5, 3, "c");
    conv.weight = random_matrix(9, 5, 1);
    conv.bias = random_matrix(1, 5, 2);
    const RowMatrix x = random_matrix(7, 33, 3);
    const RowMatrix a = conv.forward(x, nn::Mode::infer, nullptr);
    const RowMatrix b = nn::conv1d_forward_reference(x, conv.weight, conv.bias, 11, 3, 3);
    CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-13);
}

TEST_CASE("parallel Adam matches the serial reference") {
    const std::size_t n = 10007;
    std::vector<double> p1(n), g(n), m1(n, 0.0), v1(n, 0.0);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> nd;
    for (std::size_t i = 0; i < n; ++i) {
        p1[i] = nd(rng);
        g[i] = nd(rng);
    }
    auto p2 = p1, m2 = m1, v2 = v1;
    for (long long t = 1; t <= 5; ++t) {
        nn::adam_update(p1.data(), g.data(), m1.data(), v1.data(), n, {}, t);
        nn::adam_update_reference(p2.data(), g.data(), m2.data(), v2.data(), n, {}, t);
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(p1[i] - p2[i]));
    CHECK(worst <= 1e-14);
    // First step moves every parameter by about the learning rate against its gradient.
    std::vector<double> p(1, 0.0), gg(1, 0.5), mm(1, 0.0), vv(1, 0.0);
    nn::adam_update(p.data(), gg.data(), mm.data(), vv.data(), 1, {}, 1);
    CHECK(p[0] == doctest::Approx(-1e-3).epsilon(1e-6));
}

TEST_CASE("dropout is the identity at inference and scales survivors in training") {
    nn::Dropout d(0.25);
    const RowMatrix x = RowMatrix::Ones(50, 40);
    CHECK(d.forward(x, nn::Mode::infer, nullptr) == x);
    nn::Rng rng(1);
    const RowMatrix y = d.forward(x, nn::Mode::train, &rng);
    std::size_t zeros = 0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double v = y.data()[i];
        CHECK((v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-15));
        zeros += v == 0.0;
    }
    CHECK(zeros > 400);
    CHECK(zeros < 600);
}

TEST_CASE("zero epochs return the initial model with an empty log") {
    CnnModel m = init_model(tiny_spec(), 3);
    Dataset tr, va;
    tr.features.values = random_matrix(6, 6, 1);
    tr.targets.values = random_matrix(6, 2, 2);
    va = tr;
    TrainConfig cfg;
    cfg.max_epochs = 0;
    CnnModel out = train(m, tr, va, cfg);
    CHECK(flat_params(out) == flat_params(m));
    CHECK(out.training_log.empty());
}

TEST_CASE("a tiny network overfits a single batch of 8 samples") {
    NetSpec s = tiny_spec();
    s.dense_units = {16, 16};
    CnnModel m = init_model(s, 11);
    Dataset tr;
    tr.features.values = random_matrix(8, 6, 1, 0.0, 1.0);
    tr.targets.values = random_matrix(8, 2, 2, 0.0, 1.0);
    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.max_epochs = 2000;
    cfg.patience = 2000;
    cfg.min_delta = 0.0;
    cfg.adam.learning_rate = 1e-2;
    cfg.seed = 1;
    CnnModel out = train(m, tr, tr, cfg);
    CHECK(loss_mse(predict(out, tr.features.values), tr.targets.values) < 1e-4);
    REQUIRE(out.initial_train_mse.has_value());
    CHECK(out.training_log.size() <= 2000);
}

TEST_CASE("early stopping fires patience epochs after the plateau starts") {
    for (int patience : {1, 3, 10}) {
        EarlyStopping es(patience, 1e-5);
        const int k = 7;
        int stopped = 0;
        for (int epoch = 1; epoch <= 100; ++epoch) {
            const double val = epoch <= k ? 1.0 / epoch : 1.0 / k + 1e-7 * epoch;
            if (es.update(epoch, val)) {
                stopped = epoch;
                break;
            }
        }
        CHECK(stopped == k + patience);
        CHECK(es.best_epoch() == k);
    }
}

TEST_CASE("training returns the best validation epoch and stops early") {
    CnnModel m = init_model(tiny_spec(), 5);
    Dataset tr, va;
    tr.features.values = random_matrix(30, 6, 1, 0.0, 1.0);
    tr.targets.values = random_matrix(30, 2, 2, 0.0, 1.0);
    va.features.values = random_matrix(10, 6, 3, 0.0, 1.0);
    va.targets.values = random_matrix(10, 2, 4, 0.0, 1.0);
    TrainConfig cfg;
    cfg.max_epochs = 300;
    cfg.patience = 5;
    cfg.seed = 2;
    CnnModel out = train(m, tr, va, cfg);
    const auto& log = out.training_log;
    REQUIRE(!log.empty());
    double best = INFINITY;
    for (const auto& e : log) best = std::min(best, e.val_mse);
    CHECK(loss_mse(predict(out, va.features.values), va.targets.values) == doctest::Approx(best).epsilon(1e-9));
    CHECK(log.back().epoch < 300);
}

TEST_CASE("single-threaded training is bit-reproducible") {
    Dataset tr, va;
    tr.features.values = random_matrix(20, 6, 1, 0.0, 1.0);
    tr.targets.values = random_matrix(20, 2, 2, 0.0, 1.0);
    va.features.values = random_matrix(5, 6, 3, 0.0, 1.0);
    va.targets.values = random_matrix(5, 2, 4, 0.0, 1.0);
    TrainConfig cfg;
    cfg.max_epochs = 15;
    cfg.seed = 8;
    NetSpec s = tiny_spec(true);
    s.dropout_rate = 0.2;
    CnnModel a = train(init_model(s, 1), tr, va, cfg), b = train(init_model(s, 1), tr, va, cfg);
    CHECK(flat_params(a) == flat_params(b));
}

TEST_CASE("non-finite losses abort training") {
    Dataset tr;
    tr.features.values = random_matrix(6, 6, 1);
    tr.features.values(2, 3) = std::nan("");
    tr.targets.values = random_matrix(6, 2, 2);
    TrainConfig cfg;
    cfg.max_epochs = 3;
    CHECK_THROWS_AS(train(init_model(tiny_spec(), 1), tr, tr, cfg), DivergenceError);
}

TEST_CASE("inference is deterministic and leaves batchnorm statistics alone") {
    CnnModel m(tiny_spec(true));
    randomize(m, 4);
    m.forward(random_matrix(8, 6, 9), nn::Mode::train);
    std::vector<double> before;
    for (auto& b : m.buffers()) before.insert(before.end(), b.value->data(), b.value->data() + b.value->size());
    const RowMatrix x = random_matrix(4, 6, 1);
    const RowMatrix a = predict(m, x), b = predict(m, x);
    CHECK(a == b);
    std::vector<double> after;
    for (auto& buf : m.buffers()) after.insert(after.end(), buf.value->data(), buf.value->data() + buf.value->size());
    CHECK(before == after);
}

TEST_CASE("depth maps clamp, threshold and unflatten predictions") {
    NetSpec s = tiny_spec();
    s.output_dim = 5;
    CnnModel m = init_model(s, 6);
    GridGeometry g;
    g.ncols = 3;
    g.nrows = 2;
    const std::vector<std::size_t> cells = {0, 1, 3, 4, 5};
    FeatureMatrix f;
    f.values = random_matrix(4, 6, 7, 0.0, 1.0);
    const auto maps = predict_depth_maps(m, f, cells, g, -9999.0, 0.3);
    const RowMatrix raw = predict(m, f.values);
    REQUIRE(maps.size() == 4);
    for (std::size_t r = 0; r < 4; ++r) {
        CHECK(maps[r].is_nodata(2));
        for (std::size_t k = 0; k < cells.size(); ++k) {
            const double v = std::max(0.0, raw(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)));
            CHECK(maps[r][cells[k]] == (v > 0.3 ? v : 0.0));
        }
    }
    for (auto& p : m.params()) p.value->setZero();
    for (const auto& map : predict_depth_maps(m, f, cells, g, -9999.0))
        for (std::size_t i = 0; i < map.size(); ++i) CHECK((map.is_nodata(i) || map[i] == 0.0));
    CHECK_THROWS_AS(predict_depth_maps(m, f, {0, 1}, g, -9999.0), ManifestError);
}

TEST_CASE("models round-trip through files and reject mismatches") {
    const auto dir = std::filesystem::temp_directory_path() / "floodcnn_test_nnet";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "m.bin").string();
    CnnModel m(tiny_spec(true));
    randomize(m, 12);
    m.forward(random_matrix(8, 6, 1), nn::Mode::train);
    save_model(path, m);
    CnnModel back = load_model(path);
    const RowMatrix probe = random_matrix(5, 6, 2);
    CHECK(back.forward(probe, nn::Mode::infer) == m.forward(probe, nn::Mode::infer));
    CHECK(back.spec() == m.spec());

    NetSpec other = tiny_spec(true);
    other.dense_units = {4, 5};
    CHECK_THROWS_WITH_AS(load_model(path, other), doctest::Contains("dense2"), ShapeError);

    const auto size = std::filesystem::file_size(path);
    std::filesystem::copy_file(path, dir / "cut.bin");
    std::filesystem::resize_file(dir / "cut.bin", size / 2);
    CHECK_THROWS_AS(load_model((dir / "cut.bin").string()), LoadError);
    std::filesystem::remove_all(dir);
}

}
