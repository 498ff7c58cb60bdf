#include<stdio.h>
int main(){
float ti, tax;
scanf("%f";&ti);
if(ti<200001){
printf("ti=0");}
else if(200000<ti && ti<500001){
tax=0.1*(ti-200000);
printf("tax=%f",tax);}
else if(500000<ti && ti<1000001){
tax=30000+0.2*(ti-500000);
printf("tax=%f",tax);
else if(ti>1000000){
tax=130000+0.3*(ti-1000000);
printf("tax=%f",tax);}
return 0;}
