# ui package 