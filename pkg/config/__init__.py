# config package 