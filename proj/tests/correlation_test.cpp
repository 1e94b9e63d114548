#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "edgeimpute/correlation.hpp"
#include "oracles.hpp"

using namespace edgeimpute;

namespace
{

ErrorCode code_of(auto&& fn)
{
    try
    {
        fn();
    }
    catch (const Error& e)
    {
        return e.code();
    }
    ADD_FAILURE() << "expected an edgeimpute::Error";
    return ErrorCode::io;
}

Eigen::MatrixXd to_eigen(const oracle::Matrix& m)
{
    Eigen::MatrixXd out(m.size(), m.size());
    for (std::size_t i = 0; i < m.size(); ++i)
        for (std::size_t j = 0; j < m.size(); ++j)
            out(i, j) = m[i][j];
    return out;
}

// Feeds rows[t] as the report of `dev` at tick t+1.
void feed(WindowStore& store, DeviceId dev, const std::vector<std::vector<double>>& rows)
{
    Tick t = 1;
    for (const auto& r : rows)
        store.ingest(DeviceReport(dev, t++, r));
}

} // namespace

TEST(CosineSimilarity, Orthogonal)
{
    EXPECT_DOUBLE_EQ(cosine_similarity(std::vector{1.0, 0.0}, std::vector{0.0, 1.0}, {0, 1}), 0.0);
}

TEST(CosineSimilarity, Colinear)
{
    EXPECT_NEAR(cosine_similarity(std::vector{1.0, 2.0, 3.0}, std::vector{2.0, 4.0, 6.0}, {0, 1, 2}), 1.0, 1e-15);
}

TEST(CosineSimilarity, FortyFiveDegrees)
{
    EXPECT_NEAR(cosine_similarity(std::vector{1.0, 1.0}, std::vector{1.0, 0.0}, {0, 1}), 1.0 / std::sqrt(2.0),
                1e-15);
}

TEST(CosineSimilarity, RestrictsToDims)
{
    // Dimension 2 would make these orthogonal; excluded it leaves them colinear.
    EXPECT_NEAR(cosine_similarity(std::vector{1.0, 1.0, 5.0}, std::vector{2.0, 2.0, -1.0}, {0, 1}), 1.0, 1e-15);
}

TEST(CosineSimilarity, NegativeClampsUnlessDisabled)
{
    const std::vector a{1.0, 0.0};
    const std::vector b{-1.0, 0.0};
    EXPECT_EQ(cosine_similarity(a, b, {0, 1}), 0.0);
    EXPECT_NEAR(cosine_similarity(a, b, {0, 1}, false), -1.0, 1e-15);
}

TEST(CosineSimilarity, Errors)
{
    const std::vector z{0.0, 0.0};
    EXPECT_EQ(code_of([&] { (void)cosine_similarity(z, z, {0, 1}); }), ErrorCode::undefined_similarity);
    EXPECT_EQ(code_of([&] { (void)cosine_similarity(z, z, {}); }), ErrorCode::insufficient_overlap);
    EXPECT_EQ(cosine_similarity(z, std::vector{1.0, 2.0}, {0, 1}), 0.0);
}

TEST(CosineSimilarity, SelfSimilarityIsOne)
{
    std::mt19937 gen(1);
    std::uniform_real_distribution<double> u(-10.0, 10.0);
    for (int i = 0; i < 500; ++i)
    {
        std::vector<double> a(1 + gen() % 9);
        for (double& x : a)
            x = u(gen);
        DimSet dims(a.size());
        for (std::size_t d = 0; d < a.size(); ++d)
            dims[d] = d;
        EXPECT_NEAR(cosine_similarity(a, a, dims, false), 1.0, 1e-14);
    }
}

TEST(Mahalanobis, IdenticalPointsAreAtZero)
{
    Eigen::MatrixXd cov(2, 2);
    cov << 2.0, 0.3, 0.3, 1.0;
    EXPECT_EQ(mahalanobis(std::vector{1.0, -4.0}, std::vector{1.0, -4.0}, cov), 0.0);
}

TEST(Mahalanobis, IdentityCovarianceIsEuclidean)
{
    EXPECT_NEAR(mahalanobis(std::vector{3.0, 4.0}, std::vector{0.0, 0.0}, Eigen::MatrixXd::Identity(2, 2)), 5.0,
                1e-15);
}

TEST(Mahalanobis, OneDimensionalVariance)
{
    Eigen::MatrixXd cov(1, 1);
    cov << 4.0;
    EXPECT_NEAR(mahalanobis(std::vector{2.0}, std::vector{0.0}, cov), 1.0, 1e-15);
}

TEST(Mahalanobis, SingularCovarianceIsReported)
{
    EXPECT_EQ(code_of([] { (void)mahalanobis(std::vector{1.0, 0.0}, std::vector{0.0, 0.0},
                                             Eigen::MatrixXd::Zero(2, 2)); }),
              ErrorCode::singular_covariance);
}

TEST(Mahalanobis, ScaledIdentityIsEuclideanOverSigma)
{
    std::mt19937 gen(2);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    std::uniform_real_distribution<double> s(0.1, 3.0);
    for (int i = 0; i < 500; ++i)
    {
        const std::size_t n = 1 + gen() % 8;
        std::vector<double> x(n), y(n);
        double e2 = 0.0;
        for (std::size_t d = 0; d < n; ++d)
        {
            x[d] = u(gen);
            y[d] = u(gen);
            e2 += (x[d] - y[d]) * (x[d] - y[d]);
        }
        const double sigma = s(gen);
        const Eigen::MatrixXd cov = sigma * sigma * Eigen::MatrixXd::Identity(n, n);
        EXPECT_TRUE(oracle::rel_close(mahalanobis(x, y, cov), std::sqrt(e2) / sigma, 1e-12));
    }
}

TEST(Mahalanobis, MatchesInverseOracleOnRandomSpdMatrices)
{
    std::mt19937 gen(4);
    std::normal_distribution<double> n01;
    for (int i = 0; i < 200; ++i)
    {
        const std::size_t n = 1 + gen() % 6;
        oracle::Matrix a(n + 3, std::vector<double>(n));
        for (auto& r : a)
            for (auto& v : r)
                v = n01(gen);
        oracle::Matrix cov(n, std::vector<double>(n, 0.0));
        for (const auto& r : a)
            for (std::size_t p = 0; p < n; ++p)
                for (std::size_t q = 0; q < n; ++q)
                    cov[p][q] += r[p] * r[q];
        for (std::size_t p = 0; p < n; ++p)
            cov[p][p] += 0.1;
        std::vector<double> x(n), y(n);
        for (std::size_t d = 0; d < n; ++d)
        {
            x[d] = n01(gen);
            y[d] = n01(gen);
        }
        EXPECT_TRUE(oracle::rel_close(mahalanobis(x, y, to_eigen(cov)), oracle::mahalanobis(x, y, cov), 1e-9));
    }
}

TEST(EstimateCovariance, IdenticalRowsGivePureRegularizer)
{
    WindowStore store(10);
    feed(store, 0, {{2.0, 3.0}, {2.0, 3.0}, {2.0, 3.0}});
    feed(store, 1, {{2.0, 3.0}, {2.0, 3.0}});
    CorrelationParams params;
    const Eigen::MatrixXd cov = estimate_covariance(store, 0, 1, {0, 1}, params);
    EXPECT_TRUE(cov.isApprox(params.ridge_floor * Eigen::MatrixXd::Identity(2, 2), 0.0));
}

TEST(EstimateCovariance, MatchesBruteForceScatter)
{
    // Device 0 reports (0,0),(2,0); device 1 the same. Oracle diagonal is (4/3, 0).
    const oracle::Matrix rows0{{0.0, 0.0}, {2.0, 0.0}};
    const oracle::Matrix rows1{{0.0, 0.0}, {2.0, 0.0}};
    const oracle::Matrix expected = oracle::pooled_scatter({rows0, rows1});
    ASSERT_NEAR(expected[0][0], 4.0 / 3.0, 1e-15);
    ASSERT_EQ(expected[1][1], 0.0);

    WindowStore store(10);
    feed(store, 0, rows0);
    feed(store, 1, rows1);
    CorrelationParams params;
    const Eigen::MatrixXd cov = estimate_covariance(store, 0, 1, {0, 1}, params);
    const double ridge = params.ridge_scale * (4.0 / 3.0) / 2.0;
    EXPECT_NEAR(cov(0, 0), 4.0 / 3.0 + ridge, 1e-15);
    EXPECT_NEAR(cov(1, 1), ridge, 1e-18);
    EXPECT_EQ(cov(0, 1), 0.0);
}

TEST(EstimateCovariance, OneUsableRowIsInsufficient)
{
    WindowStore store(10);
    feed(store, 0, {{1.0, 2.0}});
    feed(store, 1, {{1.0, 2.0}, {3.0, 1.0}});
    EXPECT_EQ(code_of([&] { (void)estimate_covariance(store, 0, 1, {0, 1}); }), ErrorCode::insufficient_history);

    // Masked rows do not count as usable.
    WindowStore masked(10);
    masked.ingest(DeviceReport(0, 1, {1.0, 2.0}));
    masked.ingest(DeviceReport(0, 2, {1.0, 2.0}, {false, true}));
    feed(masked, 1, {{1.0, 2.0}, {3.0, 1.0}});
    EXPECT_EQ(code_of([&] { (void)estimate_covariance(masked, 0, 1, {0, 1}); }), ErrorCode::insufficient_history);
    EXPECT_NO_THROW((void)estimate_covariance(masked, 0, 1, {0}));
}

TEST(DeviceMd, IdenticalWindowsAreAtZero)
{
    WindowStore store(10);
    const std::vector<std::vector<double>> rows{{1.0, 2.0}, {1.5, 2.5}, {0.5, 3.0}, {1.0, 1.0}};
    feed(store, 0, rows);
    feed(store, 1, rows);
    EXPECT_EQ(device_md(store, 0, 1, {0, 1}), 0.0);
}

TEST(DeviceMd, UnitScatterRegimeIsEuclidean)
{
    // Each window cycles through (+-1, +-1) around its mean, so the pooled
    // scatter is exactly 2n/(2n-1) * I plus the ridge floor.
    const std::size_t n = 100;
    std::vector<std::vector<double>> a, b;
    const double signs[4][2] = {{1, 1}, {1, -1}, {-1, 1}, {-1, -1}};
    for (std::size_t i = 0; i < n; ++i)
    {
        a.push_back({10.0 + signs[i % 4][0], 20.0 + signs[i % 4][1]});
        b.push_back({13.0 + signs[i % 4][0], 24.0 + signs[i % 4][1]});
    }
    WindowStore store(n);
    feed(store, 0, a);
    feed(store, 1, b);
    CorrelationParams params;
    params.ridge_scale = 0.0;
    const double md = device_md(store, 0, 1, {0, 1}, params);
    const double expected = 5.0 / std::sqrt(2.0 * n / (2.0 * n - 1.0) + params.ridge_floor);
    EXPECT_NEAR(md, expected, 1e-12);
    EXPECT_NEAR(md, 5.0, 0.05);
}

TEST(DeviceMd, ConstantStreamsAreRidgeDominated)
{
    WindowStore store(10);
    feed(store, 0, std::vector<std::vector<double>>(10, {1.0, 1.0}));
    feed(store, 1, std::vector<std::vector<double>>(10, {4.0, 5.0}));
    CorrelationParams params;
    // S = ridge_floor * I, so MD = |(3,4)| / sqrt(ridge_floor).
    const double md = device_md(store, 0, 1, {0, 1}, params);
    EXPECT_TRUE(oracle::rel_close(md, 5.0 / std::sqrt(params.ridge_floor), 1e-12));
}

TEST(DeviceMd, TickSumAddsRowDistances)
{
    WindowStore store(10);
    feed(store, 0, {{0.0, 0.0}, {2.0, 0.0}, {0.0, 1.0}});
    feed(store, 1, {{1.0, 1.0}, {0.0, 0.0}});
    CorrelationParams params;
    params.md_mode = MdMode::tick_sum;
    const Eigen::MatrixXd cov = estimate_covariance(store, 0, 1, {0, 1}, params);
    const double expected = mahalanobis(std::vector{0.0, 1.0}, std::vector{0.0, 0.0}, cov) +
                            mahalanobis(std::vector{2.0, 0.0}, std::vector{1.0, 1.0}, cov);
    EXPECT_NEAR(device_md(store, 0, 1, {0, 1}, params), expected, 1e-12);
}

TEST(EnsembleScore, Examples)
{
    EXPECT_DOUBLE_EQ(ensemble_score(0.9, 2.0, 1e-9), 0.45);
    EXPECT_DOUBLE_EQ(ensemble_score(0.7, 0.0, 1e-9), 0.7 / 1e-9);
    EXPECT_EQ(ensemble_score(0.0, 3.0, 1e-9), 0.0);
    EXPECT_EQ(ensemble_score(0.0, 0.0, 1e-9), 0.0);
}

TEST(EnsembleScore, MonotoneInCsAndMd)
{
    std::mt19937 gen(8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_real_distribution<double> m(0.0, 10.0);
    for (int i = 0; i < 2000; ++i)
    {
        const double cs1 = u(gen), cs2 = u(gen), md1 = m(gen), md2 = m(gen);
        const double md = std::min(md1, md2);
        EXPECT_LE(ensemble_score(std::min(cs1, cs2), md, 1e-9), ensemble_score(std::max(cs1, cs2), md, 1e-9));
        EXPECT_GE(ensemble_score(cs1, std::min(md1, md2), 1e-9), ensemble_score(cs1, std::max(md1, md2), 1e-9));
    }
}

namespace
{

// Five devices following a common ramp with device-specific noise; device 0's
// latest report has dimension 1 masked.
WindowStore five_device_store(std::uint32_t seed, const std::vector<DeviceId>& order = {0, 1, 2, 3, 4})
{
    std::mt19937 gen(seed);
    std::normal_distribution<double> noise(0.0, 0.1);
    std::vector<std::vector<std::vector<double>>> rows(5);
    for (DeviceId d = 0; d < 5; ++d)
        for (int t = 0; t < 10; ++t)
            rows[d].push_back({5.0 + 0.1 * t + noise(gen), 3.0 + noise(gen), 7.0 - 0.05 * t + noise(gen)});
    WindowStore store(10);
    for (int t = 0; t < 10; ++t)
        for (DeviceId d : order)
        {
            std::vector<bool> mask(3, false);
            if (d == 0 && t == 9)
                mask[1] = true;
            store.ingest(DeviceReport(d, t + 1, rows[d][t], mask));
        }
    return store;
}

} // namespace

TEST(SelectPeers, AllPeersQualify)
{
    const WindowStore store = five_device_store(1);
    const PeerGroup g = select_peers(store, 0, {1}, 4);
    ASSERT_EQ(g.size(), 4u);
    for (std::size_t i = 1; i < g.size(); ++i)
        EXPECT_TRUE(ranks_before(g.members[i - 1], g.members[i]));
    for (const auto& m : g.members)
    {
        EXPECT_NE(m.peer, 0u);
        EXPECT_EQ(m.dims_used, (DimSet{0, 2}));
        EXPECT_EQ(m.f_c, m.cs / std::max(m.md, 1e-9));
    }
}

TEST(SelectPeers, KeepsTopK)
{
    const WindowStore store = five_device_store(2);
    const PeerGroup all = select_peers(store, 0, {1}, 4);
    const PeerGroup two = select_peers(store, 0, {1}, 2);
    ASSERT_EQ(two.size(), 2u);
    EXPECT_EQ(two.members[0].peer, all.members[0].peer);
    EXPECT_EQ(two.members[1].peer, all.members[1].peer);
}

TEST(SelectPeers, TiesGoToLowerDeviceIndex)
{
    WindowStore store(10);
    const std::vector<std::vector<double>> target{{1.0, 2.0}, {1.2, 2.1}, {0.9, 1.8}};
    const std::vector<std::vector<double>> twin{{1.1, 2.0}, {1.3, 2.2}, {1.0, 1.7}};
    feed(store, 0, target);
    feed(store, 3, twin);
    feed(store, 2, twin);
    const PeerGroup g = select_peers(store, 0, {}, 1);
    ASSERT_EQ(g.size(), 1u);
    EXPECT_EQ(g.members[0].peer, 2u);
}

TEST(SelectPeers, EnumerationOrderDoesNotMatter)
{
    const WindowStore a = five_device_store(3, {0, 1, 2, 3, 4});
    const WindowStore b = five_device_store(3, {4, 2, 0, 3, 1});
    const PeerGroup ga = select_peers(a, 0, {1}, 3);
    const PeerGroup gb = select_peers(b, 0, {1}, 3);
    ASSERT_EQ(ga.size(), gb.size());
    for (std::size_t i = 0; i < ga.size(); ++i)
    {
        EXPECT_EQ(ga.members[i].peer, gb.members[i].peer);
        EXPECT_EQ(ga.members[i].f_c, gb.members[i].f_c);
    }
}

TEST(SelectPeers, PeersWithoutHistoryDoNotQualify)
{
    WindowStore store(10);
    feed(store, 0, {{1.0, 2.0}, {1.0, 2.5}, {1.5, 2.0}});
    store.ingest(DeviceReport(1, 3, {1.0, 2.0}));
    store.ingest(DeviceReport(2, 3, {1.0, 2.0}));
    EXPECT_TRUE(select_peers(store, 0, {}, 4).empty());
}

TEST(SelectPeers, PeerMaskedOnAllSharedDimsIsSkipped)
{
    WindowStore store(10);
    feed(store, 0, {{1.0, 2.0}, {1.0, 2.5}});
    feed(store, 1, {{1.0, 2.0}, {1.1, 2.4}});
    store.ingest(DeviceReport(0, 3, {1.0, 0.0}, {false, true}));
    store.ingest(DeviceReport(1, 3, {0.0, 2.0}, {true, false}));
    EXPECT_TRUE(select_peers(store, 0, {1}, 4).empty());
}

TEST(SelectPeers, IdenticalHistoryRanksFirst)
{
    WindowStore store(10);
    const std::vector<std::vector<double>> rows{{1.0, 2.0}, {1.2, 2.1}, {0.9, 1.8}};
    feed(store, 0, rows);
    feed(store, 1, {{5.0, 1.0}, {4.0, 2.0}, {6.0, 1.5}});
    feed(store, 2, rows);
    const PeerGroup g = select_peers(store, 0, {}, 2);
    ASSERT_EQ(g.size(), 2u);
    EXPECT_EQ(g.members[0].peer, 2u);
    EXPECT_EQ(g.members[0].md, 0.0);
    EXPECT_TRUE(std::isfinite(g.members[0].f_c));
}
