#include <catch2/catch_amalgamated.hpp>

#include <salt/text.hpp>

using namespace salt;

TEST_CASE("tokenize grammar captions") {
    TokenSequence seq = tokenize("a red circle on green plain");
    REQUIRE(seq.size() == 6);
    for (int id : seq.ids) {
        REQUIRE(id > 0);
        REQUIRE(id < int(vocabulary().size()));
    }
    REQUIRE(tokenize("a red circle on green plain").ids == seq.ids);
}

TEST_CASE("tokenize errors") {
    REQUIRE_THROWS_AS(tokenize(""), tokenize_error);
    REQUIRE_THROWS_AS(tokenize("   "), tokenize_error);
    REQUIRE_THROWS_WITH(tokenize("a purple circle on green plain"),
                        Catch::Matchers::ContainsSubstring("purple"));
}

TEST_CASE("null token is id 0") {
    REQUIRE(word_id("<null>") == kNullToken);
    REQUIRE(null_tokens().ids == std::vector<int>{0});
}

TEST_CASE("two-object caption fits the token budget") {
    TokenSequence seq = tokenize("a red circle and a blue square on gray plain");
    REQUIRE(seq.size() == 10);
    REQUIRE(vocabulary()[seq.ids[2]] == "circle");
    REQUIRE(vocabulary()[seq.ids[6]] == "square");
}
