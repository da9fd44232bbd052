#include <stdio.h>
#include <string.h>
#include "oqw.h"

static const char *MODEL =
    "{\"lattice_dim\":1,\"shifts\":[[-1],[1]],\"kraus\":["
    "[[[0.7071067811865476,0],[0,0]],[[-0.4714045207910317,0],[0.5773502691896257,0]]],"
    "[[[0.408248290463863,0],[0,0]],[[0.3333333333333333,0],[0.816496580927726,0]]]]}";

static const char *STATE = "{\"entries\":[{\"site\":[0],\"matrix\":[[[1,0],[0,0]],[[0,0],[0,0]]]}]}";

int main(void) {
    OqwModel *model = NULL;
    OqwState *state = NULL;
    OqwDecomposition *dec = NULL;
    size_t r = 0, t = 0, b = 0;
    double m = 0, d = 0;
    char msg[256];

    if (oqw_model_from_json(MODEL, &model) != OQW_STATUS_OK) {
        oqw_last_error_message(msg, sizeof msg);
        fprintf(stderr, "model: %s\n", msg);
        return 1;
    }
    if (oqw_state_from_json(STATE, &state) != OQW_STATUS_OK) return 2;
    if (oqw_decompose(model, 1, &dec) != OQW_STATUS_OK) return 3;
    if (oqw_decomposition_summary(dec, &r, &t, &b) != OQW_STATUS_OK) return 4;
    if (oqw_block_clt(dec, 0, &m, 1, &d, 1) != OQW_STATUS_OK) return 5;
    printf("%zu %zu %zu %.10f %.10f\n", r, t, b, m, d);
    if (oqw_model_from_json("{", &model) != OQW_STATUS_PARSE_ERROR) return 6;
    oqw_decomposition_free(dec);
    oqw_state_free(state);
    oqw_model_free(model);
    return 0;
}
