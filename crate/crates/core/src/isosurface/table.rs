//! Marching-cubes case table: triangles as edge-index triples for each of the
//! 256 inside/outside corner configurations (bit `i` set = corner `i` inside).

pub(crate) static TRIANGLES: [&[[u8; 3]]; 256] = [
    &[],
    &[[0, 3, 8]],
    &[[0, 9, 1]],
    &[[3, 8, 9], [1, 3, 9]],
    &[[1, 10, 2]],
    &[[0, 3, 8], [1, 10, 2]],
    &[[9, 10, 2], [0, 9, 2]],
    &[[8, 9, 10], [3, 8, 10], [2, 3, 10]],
    &[[2, 11, 3]],
    &[[2, 11, 8], [0, 2, 8]],
    &[[0, 9, 1], [2, 11, 3]],
    &[[11, 8, 9], [2, 11, 9], [1, 2, 9]],
    &[[10, 11, 3], [1, 10, 3]],
    &[[10, 11, 8], [1, 10, 8], [0, 1, 8]],
    &[[10, 11, 3], [9, 10, 3], [0, 9, 3]],
    &[[9, 10, 11], [8, 9, 11]],
    &[[4, 8, 7]],
    &[[3, 7, 4], [0, 3, 4]],
    &[[0, 9, 1], [4, 8, 7]],
    &[[7, 4, 9], [3, 7, 9], [1, 3, 9]],
    &[[1, 10, 2], [4, 8, 7]],
    &[[3, 7, 4], [0, 3, 4], [1, 10, 2]],
    &[[9, 10, 2], [0, 9, 2], [4, 8, 7]],
    &[[4, 9, 10], [7, 4, 10], [3, 7, 10], [2, 3, 10]],
    &[[2, 11, 3], [4, 8, 7]],
    &[[11, 7, 4], [2, 11, 4], [0, 2, 4]],
    &[[0, 9, 1], [2, 11, 3], [4, 8, 7]],
    &[[7, 4, 9], [11, 7, 9], [2, 11, 9], [1, 2, 9]],
    &[[10, 11, 3], [1, 10, 3], [4, 8, 7]],
    &[[11, 7, 4], [10, 11, 4], [1, 10, 4], [0, 1, 4]],
    &[[10, 11, 3], [9, 10, 3], [0, 9, 3], [4, 8, 7]],
    &[[10, 11, 7], [9, 10, 7], [4, 9, 7]],
    &[[4, 5, 9]],
    &[[0, 3, 8], [4, 5, 9]],
    &[[4, 5, 1], [0, 4, 1]],
    &[[8, 4, 5], [3, 8, 5], [1, 3, 5]],
    &[[1, 10, 2], [4, 5, 9]],
    &[[0, 3, 8], [1, 10, 2], [4, 5, 9]],
    &[[5, 10, 2], [4, 5, 2], [0, 4, 2]],
    &[[4, 5, 10], [8, 4, 10], [3, 8, 10], [2, 3, 10]],
    &[[2, 11, 3], [4, 5, 9]],
    &[[2, 11, 8], [0, 2, 8], [4, 5, 9]],
    &[[4, 5, 1], [0, 4, 1], [2, 11, 3]],
    &[[8, 4, 5], [11, 8, 5], [2, 11, 5], [1, 2, 5]],
    &[[10, 11, 3], [1, 10, 3], [4, 5, 9]],
    &[[10, 11, 8], [1, 10, 8], [0, 1, 8], [4, 5, 9]],
    &[[10, 11, 3], [5, 10, 3], [4, 5, 3], [0, 4, 3]],
    &[[10, 11, 8], [5, 10, 8], [4, 5, 8]],
    &[[9, 8, 7], [5, 9, 7]],
    &[[7, 5, 9], [3, 7, 9], [0, 3, 9]],
    &[[7, 5, 1], [8, 7, 1], [0, 8, 1]],
    &[[3, 7, 5], [1, 3, 5]],
    &[[1, 10, 2], [9, 8, 7], [5, 9, 7]],
    &[[7, 5, 9], [3, 7, 9], [0, 3, 9], [1, 10, 2]],
    &[[5, 10, 2], [7, 5, 2], [8, 7, 2], [0, 8, 2]],
    &[[7, 5, 10], [3, 7, 10], [2, 3, 10]],
    &[[2, 11, 3], [9, 8, 7], [5, 9, 7]],
    &[[7, 5, 9], [11, 7, 9], [2, 11, 9], [0, 2, 9]],
    &[[7, 5, 1], [8, 7, 1], [0, 8, 1], [2, 11, 3]],
    &[[11, 7, 5], [2, 11, 5], [1, 2, 5]],
    &[[10, 11, 3], [1, 10, 3], [9, 8, 7], [5, 9, 7]],
    &[[1, 10, 11], [0, 1, 11], [7, 5, 9], [11, 7, 9], [0, 11, 9]],
    &[[8, 7, 5], [0, 8, 5], [10, 11, 3], [5, 10, 3], [0, 5, 3]],
    &[[10, 11, 7], [5, 10, 7]],
    &[[5, 6, 10]],
    &[[0, 3, 8], [5, 6, 10]],
    &[[0, 9, 1], [5, 6, 10]],
    &[[3, 8, 9], [1, 3, 9], [5, 6, 10]],
    &[[5, 6, 2], [1, 5, 2]],
    &[[0, 3, 8], [5, 6, 2], [1, 5, 2]],
    &[[5, 6, 2], [9, 5, 2], [0, 9, 2]],
    &[[9, 5, 6], [8, 9, 6], [3, 8, 6], [2, 3, 6]],
    &[[2, 11, 3], [5, 6, 10]],
    &[[2, 11, 8], [0, 2, 8], [5, 6, 10]],
    &[[0, 9, 1], [2, 11, 3], [5, 6, 10]],
    &[[11, 8, 9], [2, 11, 9], [1, 2, 9], [5, 6, 10]],
    &[[6, 11, 3], [5, 6, 3], [1, 5, 3]],
    &[[6, 11, 8], [5, 6, 8], [1, 5, 8], [0, 1, 8]],
    &[[6, 11, 3], [5, 6, 3], [9, 5, 3], [0, 9, 3]],
    &[[11, 8, 9], [6, 11, 9], [5, 6, 9]],
    &[[4, 8, 7], [5, 6, 10]],
    &[[3, 7, 4], [0, 3, 4], [5, 6, 10]],
    &[[0, 9, 1], [4, 8, 7], [5, 6, 10]],
    &[[7, 4, 9], [3, 7, 9], [1, 3, 9], [5, 6, 10]],
    &[[5, 6, 2], [1, 5, 2], [4, 8, 7]],
    &[[3, 7, 4], [0, 3, 4], [5, 6, 2], [1, 5, 2]],
    &[[5, 6, 2], [9, 5, 2], [0, 9, 2], [4, 8, 7]],
    &[[7, 4, 9], [3, 7, 9], [9, 5, 6], [3, 9, 6], [2, 3, 6]],
    &[[2, 11, 3], [4, 8, 7], [5, 6, 10]],
    &[[11, 7, 4], [2, 11, 4], [0, 2, 4], [5, 6, 10]],
    &[[0, 9, 1], [2, 11, 3], [4, 8, 7], [5, 6, 10]],
    &[[7, 4, 9], [11, 7, 9], [2, 11, 9], [1, 2, 9], [5, 6, 10]],
    &[[6, 11, 3], [5, 6, 3], [1, 5, 3], [4, 8, 7]],
    &[[5, 6, 11], [1, 5, 11], [11, 7, 4], [1, 11, 4], [0, 1, 4]],
    &[[6, 11, 3], [5, 6, 3], [9, 5, 3], [0, 9, 3], [4, 8, 7]],
    &[[5, 6, 11], [9, 5, 11], [9, 11, 7], [4, 9, 7]],
    &[[6, 10, 9], [4, 6, 9]],
    &[[0, 3, 8], [6, 10, 9], [4, 6, 9]],
    &[[6, 10, 1], [4, 6, 1], [0, 4, 1]],
    &[[4, 6, 10], [8, 4, 10], [3, 8, 10], [1, 3, 10]],
    &[[4, 6, 2], [9, 4, 2], [1, 9, 2]],
    &[[0, 3, 8], [4, 6, 2], [9, 4, 2], [1, 9, 2]],
    &[[4, 6, 2], [0, 4, 2]],
    &[[8, 4, 6], [3, 8, 6], [2, 3, 6]],
    &[[2, 11, 3], [6, 10, 9], [4, 6, 9]],
    &[[2, 11, 8], [0, 2, 8], [6, 10, 9], [4, 6, 9]],
    &[[6, 10, 1], [4, 6, 1], [0, 4, 1], [2, 11, 3]],
    &[[2, 11, 8], [1, 2, 8], [4, 6, 10], [8, 4, 10], [1, 8, 10]],
    &[[6, 11, 3], [4, 6, 3], [9, 4, 3], [1, 9, 3]],
    &[[9, 4, 6], [1, 9, 6], [6, 11, 8], [1, 6, 8], [0, 1, 8]],
    &[[6, 11, 3], [4, 6, 3], [0, 4, 3]],
    &[[6, 11, 8], [4, 6, 8]],
    &[[9, 8, 7], [10, 9, 7], [6, 10, 7]],
    &[[6, 10, 9], [7, 6, 9], [3, 7, 9], [0, 3, 9]],
    &[[6, 10, 1], [7, 6, 1], [8, 7, 1], [0, 8, 1]],
    &[[7, 6, 10], [3, 7, 10], [1, 3, 10]],
    &[[7, 6, 2], [8, 7, 2], [9, 8, 2], [1, 9, 2]],
    &[[2, 1, 9], [6, 2, 9], [7, 6, 9], [3, 7, 9], [0, 3, 9]],
    &[[7, 6, 2], [8, 7, 2], [0, 8, 2]],
    &[[3, 7, 6], [2, 3, 6]],
    &[[2, 11, 3], [9, 8, 7], [10, 9, 7], [6, 10, 7]],
    &[[6, 10, 9], [7, 6, 9], [11, 7, 9], [2, 11, 9], [0, 2, 9]],
    &[[6, 10, 1], [7, 6, 1], [8, 7, 1], [0, 8, 1], [2, 11, 3]],
    &[[2, 11, 7], [1, 2, 7], [7, 6, 10], [1, 7, 10]],
    &[[8, 7, 6], [9, 8, 6], [6, 11, 3], [9, 6, 3], [1, 9, 3]],
    &[[0, 1, 9], [6, 11, 7]],
    &[[8, 7, 6], [0, 8, 6], [6, 11, 3], [0, 6, 3]],
    &[[6, 11, 7]],
    &[[6, 7, 11]],
    &[[0, 3, 8], [6, 7, 11]],
    &[[0, 9, 1], [6, 7, 11]],
    &[[3, 8, 9], [1, 3, 9], [6, 7, 11]],
    &[[1, 10, 2], [6, 7, 11]],
    &[[0, 3, 8], [1, 10, 2], [6, 7, 11]],
    &[[9, 10, 2], [0, 9, 2], [6, 7, 11]],
    &[[8, 9, 10], [3, 8, 10], [2, 3, 10], [6, 7, 11]],
    &[[6, 7, 3], [2, 6, 3]],
    &[[6, 7, 8], [2, 6, 8], [0, 2, 8]],
    &[[0, 9, 1], [6, 7, 3], [2, 6, 3]],
    &[[7, 8, 9], [6, 7, 9], [2, 6, 9], [1, 2, 9]],
    &[[6, 7, 3], [10, 6, 3], [1, 10, 3]],
    &[[6, 7, 8], [10, 6, 8], [1, 10, 8], [0, 1, 8]],
    &[[6, 7, 3], [10, 6, 3], [9, 10, 3], [0, 9, 3]],
    &[[8, 9, 10], [7, 8, 10], [6, 7, 10]],
    &[[8, 11, 6], [4, 8, 6]],
    &[[11, 6, 4], [3, 11, 4], [0, 3, 4]],
    &[[0, 9, 1], [8, 11, 6], [4, 8, 6]],
    &[[6, 4, 9], [11, 6, 9], [3, 11, 9], [1, 3, 9]],
    &[[1, 10, 2], [8, 11, 6], [4, 8, 6]],
    &[[11, 6, 4], [3, 11, 4], [0, 3, 4], [1, 10, 2]],
    &[[9, 10, 2], [0, 9, 2], [8, 11, 6], [4, 8, 6]],
    &[[11, 6, 4], [3, 11, 4], [4, 9, 10], [3, 4, 10], [2, 3, 10]],
    &[[4, 8, 3], [6, 4, 3], [2, 6, 3]],
    &[[2, 6, 4], [0, 2, 4]],
    &[[0, 9, 1], [4, 8, 3], [6, 4, 3], [2, 6, 3]],
    &[[6, 4, 9], [2, 6, 9], [1, 2, 9]],
    &[[4, 8, 3], [6, 4, 3], [10, 6, 3], [1, 10, 3]],
    &[[10, 6, 4], [1, 10, 4], [0, 1, 4]],
    &[[4, 8, 3], [6, 4, 3], [10, 6, 3], [9, 10, 3], [0, 9, 3]],
    &[[9, 10, 6], [4, 9, 6]],
    &[[4, 5, 9], [6, 7, 11]],
    &[[0, 3, 8], [4, 5, 9], [6, 7, 11]],
    &[[4, 5, 1], [0, 4, 1], [6, 7, 11]],
    &[[8, 4, 5], [3, 8, 5], [1, 3, 5], [6, 7, 11]],
    &[[1, 10, 2], [4, 5, 9], [6, 7, 11]],
    &[[0, 3, 8], [1, 10, 2], [4, 5, 9], [6, 7, 11]],
    &[[5, 10, 2], [4, 5, 2], [0, 4, 2], [6, 7, 11]],
    &[[4, 5, 10], [8, 4, 10], [3, 8, 10], [2, 3, 10], [6, 7, 11]],
    &[[6, 7, 3], [2, 6, 3], [4, 5, 9]],
    &[[6, 7, 8], [2, 6, 8], [0, 2, 8], [4, 5, 9]],
    &[[4, 5, 1], [0, 4, 1], [6, 7, 3], [2, 6, 3]],
    &[[6, 7, 8], [2, 6, 8], [8, 4, 5], [2, 8, 5], [1, 2, 5]],
    &[[6, 7, 3], [10, 6, 3], [1, 10, 3], [4, 5, 9]],
    &[[6, 7, 8], [10, 6, 8], [1, 10, 8], [0, 1, 8], [4, 5, 9]],
    &[[6, 7, 3], [10, 6, 3], [5, 10, 3], [4, 5, 3], [0, 4, 3]],
    &[[6, 7, 8], [10, 6, 8], [5, 10, 8], [4, 5, 8]],
    &[[8, 11, 6], [9, 8, 6], [5, 9, 6]],
    &[[6, 5, 9], [11, 6, 9], [3, 11, 9], [0, 3, 9]],
    &[[6, 5, 1], [11, 6, 1], [8, 11, 1], [0, 8, 1]],
    &[[11, 6, 5], [3, 11, 5], [1, 3, 5]],
    &[[1, 10, 2], [8, 11, 6], [9, 8, 6], [5, 9, 6]],
    &[[6, 5, 9], [11, 6, 9], [3, 11, 9], [0, 3, 9], [1, 10, 2]],
    &[[11, 6, 5], [8, 11, 5], [5, 10, 2], [8, 5, 2], [0, 8, 2]],
    &[[11, 6, 5], [3, 11, 5], [3, 5, 10], [2, 3, 10]],
    &[[9, 8, 3], [5, 9, 3], [6, 5, 3], [2, 6, 3]],
    &[[6, 5, 9], [2, 6, 9], [0, 2, 9]],
    &[[3, 2, 6], [8, 3, 6], [6, 5, 1], [8, 6, 1], [0, 8, 1]],
    &[[2, 6, 5], [1, 2, 5]],
    &[[9, 8, 3], [5, 9, 3], [6, 5, 3], [10, 6, 3], [1, 10, 3]],
    &[[1, 10, 6], [0, 1, 6], [6, 5, 9], [0, 6, 9]],
    &[[0, 8, 3], [5, 10, 6]],
    &[[5, 10, 6]],
    &[[7, 11, 10], [5, 7, 10]],
    &[[0, 3, 8], [7, 11, 10], [5, 7, 10]],
    &[[0, 9, 1], [7, 11, 10], [5, 7, 10]],
    &[[3, 8, 9], [1, 3, 9], [7, 11, 10], [5, 7, 10]],
    &[[7, 11, 2], [5, 7, 2], [1, 5, 2]],
    &[[0, 3, 8], [7, 11, 2], [5, 7, 2], [1, 5, 2]],
    &[[7, 11, 2], [5, 7, 2], [9, 5, 2], [0, 9, 2]],
    &[[3, 8, 9], [2, 3, 9], [5, 7, 11], [9, 5, 11], [2, 9, 11]],
    &[[5, 7, 3], [10, 5, 3], [2, 10, 3]],
    &[[5, 7, 8], [10, 5, 8], [2, 10, 8], [0, 2, 8]],
    &[[0, 9, 1], [5, 7, 3], [10, 5, 3], [2, 10, 3]],
    &[[10, 5, 7], [2, 10, 7], [7, 8, 9], [2, 7, 9], [1, 2, 9]],
    &[[5, 7, 3], [1, 5, 3]],
    &[[5, 7, 8], [1, 5, 8], [0, 1, 8]],
    &[[5, 7, 3], [9, 5, 3], [0, 9, 3]],
    &[[7, 8, 9], [5, 7, 9]],
    &[[11, 10, 5], [8, 11, 5], [4, 8, 5]],
    &[[10, 5, 4], [11, 10, 4], [3, 11, 4], [0, 3, 4]],
    &[[0, 9, 1], [11, 10, 5], [8, 11, 5], [4, 8, 5]],
    &[[10, 5, 4], [11, 10, 4], [11, 4, 9], [3, 11, 9], [1, 3, 9]],
    &[[8, 11, 2], [4, 8, 2], [5, 4, 2], [1, 5, 2]],
    &[[1, 5, 4], [2, 1, 4], [11, 2, 4], [3, 11, 4], [0, 3, 4]],
    &[[8, 11, 2], [4, 8, 2], [5, 4, 2], [9, 5, 2], [0, 9, 2]],
    &[[2, 3, 11], [4, 9, 5]],
    &[[4, 8, 3], [5, 4, 3], [10, 5, 3], [2, 10, 3]],
    &[[10, 5, 4], [2, 10, 4], [0, 2, 4]],
    &[[0, 9, 1], [4, 8, 3], [5, 4, 3], [10, 5, 3], [2, 10, 3]],
    &[[10, 5, 4], [2, 10, 4], [2, 4, 9], [1, 2, 9]],
    &[[4, 8, 3], [5, 4, 3], [1, 5, 3]],
    &[[1, 5, 4], [0, 1, 4]],
    &[[4, 8, 3], [5, 4, 3], [9, 5, 3], [0, 9, 3]],
    &[[4, 9, 5]],
    &[[11, 10, 9], [7, 11, 9], [4, 7, 9]],
    &[[0, 3, 8], [11, 10, 9], [7, 11, 9], [4, 7, 9]],
    &[[11, 10, 1], [7, 11, 1], [4, 7, 1], [0, 4, 1]],
    &[[7, 11, 10], [4, 7, 10], [8, 4, 10], [3, 8, 10], [1, 3, 10]],
    &[[7, 11, 2], [4, 7, 2], [9, 4, 2], [1, 9, 2]],
    &[[0, 3, 8], [7, 11, 2], [4, 7, 2], [9, 4, 2], [1, 9, 2]],
    &[[7, 11, 2], [4, 7, 2], [0, 4, 2]],
    &[[3, 8, 4], [2, 3, 4], [4, 7, 11], [2, 4, 11]],
    &[[4, 7, 3], [9, 4, 3], [10, 9, 3], [2, 10, 3]],
    &[[9, 4, 7], [10, 9, 7], [10, 7, 8], [2, 10, 8], [0, 2, 8]],
    &[[3, 2, 10], [7, 3, 10], [7, 10, 1], [4, 7, 1], [0, 4, 1]],
    &[[1, 2, 10], [4, 7, 8]],
    &[[4, 7, 3], [9, 4, 3], [1, 9, 3]],
    &[[9, 4, 7], [1, 9, 7], [1, 7, 8], [0, 1, 8]],
    &[[4, 7, 3], [0, 4, 3]],
    &[[4, 7, 8]],
    &[[11, 10, 9], [8, 11, 9]],
    &[[11, 10, 9], [3, 11, 9], [0, 3, 9]],
    &[[11, 10, 1], [8, 11, 1], [0, 8, 1]],
    &[[3, 11, 10], [1, 3, 10]],
    &[[8, 11, 2], [9, 8, 2], [1, 9, 2]],
    &[[2, 1, 9], [11, 2, 9], [3, 11, 9], [0, 3, 9]],
    &[[8, 11, 2], [0, 8, 2]],
    &[[2, 3, 11]],
    &[[9, 8, 3], [10, 9, 3], [2, 10, 3]],
    &[[2, 10, 9], [0, 2, 9]],
    &[[3, 2, 10], [8, 3, 10], [8, 10, 1], [0, 8, 1]],
    &[[1, 2, 10]],
    &[[9, 8, 3], [1, 9, 3]],
    &[[0, 1, 9]],
    &[[0, 8, 3]],
    &[],
];
